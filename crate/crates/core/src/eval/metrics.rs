//! Center-distance average precision and true-positive error metrics.
//!
//! Conventions: BEV center-distance thresholds {0.5, 1, 2, 4} m, 101 recall
//! samples, interpolated precision is the best precision at any recall not
//! below the sample, samples with recall ≤ 0.1 are dropped and precision is
//! shifted by 0.1 and renormalized. True-positive errors use the 2 m
//! threshold.

use std::f64::consts::PI;

use super::iou::aligned_iou;
use crate::scene::GroundTruthBox;

pub const DISTANCE_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const TP_THRESHOLD: f64 = 2.0;
pub const MIN_RECALL: f64 = 0.1;
pub const MIN_PRECISION: f64 = 0.1;
const RECALL_SAMPLES: usize = 101;

/// A detection tagged with the scene it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    pub scene: usize,
    pub bbox: GroundTruthBox,
    pub score: f64,
}

/// Indices of `dets` by descending score (stable on ties).
pub fn score_order(dets: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy matching in descending score order: each detection takes the
/// nearest still-unmatched ground truth of its class and scene within
/// `threshold` (BEV center distance). Returns, per detection in input order,
/// the matched gt index within its scene.
pub fn match_detections(dets: &[ScoredBox], gts: &[Vec<GroundTruthBox>], threshold: f64) -> Vec<Option<usize>> {
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut out = vec![None; dets.len()];
    for i in score_order(dets) {
        let d = &dets[i];
        let Some(scene_gt) = gts.get(d.scene) else { continue };
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in scene_gt.iter().enumerate() {
            if taken[d.scene][g] || gt.class_id != d.bbox.class_id {
                continue;
            }
            let dist = gt.center.bev_distance(&d.bbox.center);
            if dist <= threshold && best.is_none_or(|(_, bd)| dist < bd) {
                best = Some((g, dist));
            }
        }
        if let Some((g, _)) = best {
            taken[d.scene][g] = true;
            out[i] = Some(g);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCurve {
    pub threshold: f64,
    pub ap: f64,
    /// Raw operating points in descending score order.
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    /// Interpolated precision at recall `i / 100`.
    pub interpolated: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ap: f64,
    pub ate: f64,
    pub ase: f64,
    pub aoe: f64,
    pub true_positives: usize,
    pub curves: Vec<ThresholdCurve>,
}

impl MetricsReport {
    /// Component-wise mean of `reports`; curves are taken from the first.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            ap: avg(|r| r.ap),
            ate: avg(|r| r.ate),
            ase: avg(|r| r.ase),
            aoe: avg(|r| r.aoe),
            true_positives: reports.iter().map(|r| r.true_positives).sum(),
            curves: first.curves.clone(),
        })
    }
}

/// Absolute yaw difference wrapped to `[0, π]`.
pub fn yaw_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn curve(dets: &[ScoredBox], matches: &[Option<usize>], positives: usize, threshold: f64) -> ThresholdCurve {
    let order = score_order(dets);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    for i in order {
        if matches[i].is_some() {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        recall.push(if positives == 0 { 0.0 } else { tp / positives as f64 });
        precision.push(tp / (tp + fp));
    }
    let mut interpolated = vec![0.0; RECALL_SAMPLES];
    let mut best = 0.0f64;
    let mut j = recall.len();
    for s in (0..RECALL_SAMPLES).rev() {
        let r = s as f64 / (RECALL_SAMPLES - 1) as f64;
        while j > 0 && recall[j - 1] >= r - 1e-12 {
            j -= 1;
            best = best.max(precision[j]);
        }
        interpolated[s] = best;
    }
    let first = (MIN_RECALL * (RECALL_SAMPLES - 1) as f64).round() as usize + 1;
    let kept = &interpolated[first..];
    let mean = kept.iter().map(|p| (p - MIN_PRECISION).max(0.0)).sum::<f64>() / kept.len() as f64;
    let ap = (mean / (1.0 - MIN_PRECISION)).min(1.0);
    ThresholdCurve { threshold, ap, recall, precision, interpolated }
}

/// Metrics for one class. Detections of other classes are ignored. When no
/// true positive exists at 2 m, ATE is reported as 2 m and ASE/AOE as 1.
pub fn compute_metrics(dets: &[ScoredBox], gts: &[Vec<GroundTruthBox>], class_id: usize) -> MetricsReport {
    let dets: Vec<ScoredBox> = dets.iter().filter(|d| d.bbox.class_id == class_id).cloned().collect();
    let gts: Vec<Vec<GroundTruthBox>> =
        gts.iter().map(|g| g.iter().filter(|b| b.class_id == class_id).copied().collect()).collect();
    let positives: usize = gts.iter().map(Vec::len).sum();
    let mut curves = Vec::with_capacity(DISTANCE_THRESHOLDS.len());
    let (mut ate, mut ase, mut aoe, mut n) = (0.0, 0.0, 0.0, 0usize);
    for &t in &DISTANCE_THRESHOLDS {
        let m = match_detections(&dets, &gts, t);
        if t == TP_THRESHOLD {
            for (d, g) in dets.iter().zip(&m) {
                if let Some(g) = *g {
                    let gt = &gts[d.scene][g];
                    ate += gt.center.bev_distance(&d.bbox.center);
                    ase += 1.0 - aligned_iou(gt, &d.bbox);
                    aoe += yaw_error(gt.yaw, d.bbox.yaw);
                    n += 1;
                }
            }
        }
        curves.push(curve(&dets, &m, positives, t));
    }
    let ap = curves.iter().map(|c| c.ap).sum::<f64>() / curves.len() as f64;
    let (ate, ase, aoe) =
        if n == 0 { (TP_THRESHOLD, 1.0, 1.0) } else { (ate / n as f64, ase / n as f64, aoe / n as f64) };
    MetricsReport { ap, ate, ase, aoe, true_positives: n, curves }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Point3;

    fn car(x: f64, y: f64) -> GroundTruthBox {
        GroundTruthBox {
            center: Point3::new(x, y, 0.85),
            width: 1.9,
            length: 4.6,
            height: 1.7,
            yaw: 0.2,
            vx: 0.0,
            vy: 0.0,
            class_id: 0,
        }
    }

    fn det(scene: usize, b: GroundTruthBox, score: f64) -> ScoredBox {
        ScoredBox { scene, bbox: b, score }
    }

    #[test]
    fn perfect_detections() {
        let gts = vec![vec![car(0.0, 0.0), car(10.0, 0.0)], vec![car(5.0, 5.0)]];
        let dets: Vec<ScoredBox> =
            gts.iter().enumerate().flat_map(|(s, g)| g.iter().map(move |b| det(s, *b, 0.9))).collect();
        let m = compute_metrics(&dets, &gts, 0);
        assert_eq!(m.ap, 1.0);
        assert_eq!((m.ate, m.ase, m.aoe), (0.0, 0.0, 0.0));
    }

    #[test]
    fn greedy_rule_and_thresholds() {
        let gts = vec![vec![car(0.0, 0.0)]];
        let dets = vec![det(0, car(0.0, 0.0), 0.5), det(0, car(0.0, 0.0), 0.9)];
        assert_eq!(match_detections(&dets, &gts, 0.5), vec![None, Some(0)]);
        let far = vec![det(0, car(3.0, 0.0), 0.9)];
        for (t, want) in [(0.5, None), (1.0, None), (2.0, None), (4.0, Some(0))] {
            assert_eq!(match_detections(&far, &gts, t)[0], want);
        }
    }

    #[test]
    fn yaw_offset_contributes_to_aoe() {
        let gts = vec![vec![car(0.0, 0.0)]];
        let mut b = car(0.0, 0.0);
        b.yaw += PI / 4.0;
        let m = compute_metrics(&[det(0, b, 1.0)], &gts, 0);
        assert!((m.aoe - PI / 4.0).abs() < 1e-12);
        assert!(yaw_error(3.0, -3.0) - (2.0 * PI - 6.0) < 1e-12);
    }

    #[test]
    fn no_true_positives_reports_worst_case() {
        let gts = vec![vec![car(0.0, 0.0)]];
        let m = compute_metrics(&[det(0, car(30.0, 0.0), 1.0)], &gts, 0);
        assert_eq!((m.ap, m.ate, m.ase, m.aoe), (0.0, 2.0, 1.0, 1.0));
    }

    #[test]
    fn lowest_score_false_positive_never_helps() {
        let gts = vec![vec![car(0.0, 0.0), car(10.0, 0.0), car(20.0, 0.0)]];
        let mut dets = vec![det(0, car(0.3, 0.0), 0.9), det(0, car(40.0, 0.0), 0.8), det(0, car(10.0, 1.5), 0.7)];
        let before = compute_metrics(&dets, &gts, 0).ap;
        dets.push(det(0, car(60.0, 0.0), 0.1));
        assert!(compute_metrics(&dets, &gts, 0).ap <= before);
    }
}
