//! Hungarian set loss with per-stage auxiliary terms.

use crate::autodiff::{Tape, Var};
use crate::decoder::head::{decode_head, HeadOutput, SHAPE_DIM};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::scene::{GroundTruthBox, Point3};
use crate::tensor::Matrix;

use super::matching::{box_vector, build_cost_matrix, hungarian_match, CostWeights, MatchResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// `λ_reg` on the ℓ1 box term.
    pub regression: f64,
    /// `λ_cls` on the cross-entropy term.
    pub classification: f64,
    /// Cross-entropy weight of queries matched to 'no-object'.
    pub no_object_weight: f64,
    pub cost: CostWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { regression: 1.0, classification: 1.0, no_object_weight: 0.1, cost: CostWeights::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageLoss {
    pub regression: f64,
    pub classification: f64,
}

/// Loss components; stage 0 is the pre-layer-0 auxiliary term.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub stages: Vec<StageLoss>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn regression(&self) -> f64 {
        self.stages.iter().map(|s| s.regression).sum()
    }

    pub fn classification(&self) -> f64 {
        self.stages.iter().map(|s| s.classification).sum()
    }
}

pub struct SetLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub matches: Vec<MatchResult>,
}

fn anchor_points<T: Scalar>(m: &Matrix<T>) -> Vec<Point3> {
    (0..m.rows()).map(|r| Point3::new(m.get(r, 0).as_f64(), m.get(r, 1).as_f64(), m.get(r, 2).as_f64())).collect()
}

/// Matches every stage independently and sums ℓ1 and cross-entropy terms.
///
/// Regression is summed over matched pairs and divided by `max(G, 1)`;
/// classification is the weighted mean over all queries.
pub fn set_loss<T: Scalar>(
    tape: &mut Tape<T>,
    stages: &[HeadOutput],
    gt: &[GroundTruthBox],
    cfg: &LossConfig,
) -> Result<SetLoss> {
    let mut terms = Vec::with_capacity(2 * stages.len());
    let mut breakdown = LossBreakdown::default();
    let mut matches = Vec::with_capacity(stages.len());
    let reg_scale = T::lit(cfg.regression / gt.len().max(1) as f64);
    for stage in stages {
        let preds = decode_head(tape, stage);
        let anchors = anchor_points(tape.value(stage.anchors));
        let num_queries = preds.len();
        let no_object = preds.first().map_or(0, |p| p.class_logits.len() - 1);
        let cost = build_cost_matrix(gt, &preds, &anchors, cfg.cost);
        let m = hungarian_match(&cost)?;

        let mut reg = None;
        if !m.pairs.is_empty() {
            let queries: Vec<usize> = m.pairs.iter().map(|&(_, q)| q).collect();
            let vectors: Vec<[f64; 10]> = m.pairs.iter().map(|&(g, _)| box_vector(&gt[g])).collect();
            let centers_t = Matrix::from_fn(queries.len(), 3, |r, c| T::lit(vectors[r][c]));
            let shape_t = Matrix::from_fn(queries.len(), SHAPE_DIM, |r, c| T::lit(vectors[r][3 + c]));
            let centers = tape.gather_rows(stage.centers, &queries);
            let shape = tape.gather_rows(stage.shape, &queries);
            let a = tape.l1(centers, centers_t, reg_scale);
            let b = tape.l1(shape, shape_t, reg_scale);
            reg = Some(tape.add(a, b));
        }

        let targets: Vec<usize> =
            m.query_targets(num_queries).iter().map(|t| t.map_or(no_object, |g| gt[g].class_id)).collect();
        let raw: Vec<f64> = targets.iter().map(|&t| if t == no_object { cfg.no_object_weight } else { 1.0 }).collect();
        let norm: f64 = raw.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let weights: Vec<T> = raw.iter().map(|w| T::lit(cfg.classification * w / norm)).collect();
        let cls = tape.cross_entropy(stage.logits, &targets, &weights);

        let reg_value = reg.map_or(0.0, |r| tape.scalar(r).as_f64());
        breakdown.stages.push(StageLoss { regression: reg_value, classification: tape.scalar(cls).as_f64() });
        terms.extend(reg);
        terms.push(cls);
        matches.push(m);
    }
    let total = tape.sum_scalars(&terms);
    breakdown.total = tape.scalar(total).as_f64();
    Ok(SetLoss { total, breakdown, matches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::head::SHAPE_OFFSET;

    fn stage(tape: &mut Tape<f64>, boxes: Matrix<f64>, logits: Matrix<f64>, anchors: Matrix<f64>) -> HeadOutput {
        let boxes = tape.leaf(boxes, true);
        let logits = tape.leaf(logits, true);
        let anchors = tape.constant(anchors);
        let deltas = tape.slice_cols(boxes, 0, 3);
        let centers = tape.add(anchors, deltas);
        let shape = tape.slice_cols(boxes, SHAPE_OFFSET, SHAPE_DIM);
        HeadOutput { anchors, boxes, deltas, centers, shape, logits }
    }

    fn gt_box(x: f64, y: f64) -> GroundTruthBox {
        GroundTruthBox {
            center: Point3::new(x, y, 0.85),
            width: 1.9,
            length: 4.6,
            height: 1.7,
            yaw: 0.4,
            vx: 0.0,
            vy: 0.0,
            class_id: 0,
        }
    }

    #[test]
    fn perfect_predictions_have_zero_regression() {
        let gt = vec![gt_box(1.0, 2.0), gt_box(-5.0, 7.0)];
        let mut boxes = Matrix::zeros(3, 10);
        let mut logits = Matrix::zeros(3, 2);
        for (q, g) in gt.iter().enumerate() {
            let v = box_vector(g);
            boxes.row_mut(q).copy_from_slice(&v);
            logits.set(q, 0, 40.0);
        }
        logits.set(2, 1, 40.0);
        let mut tape = Tape::new();
        let s = stage(&mut tape, boxes, logits, Matrix::zeros(3, 3));
        let loss = set_loss(&mut tape, &[s], &gt, &LossConfig::default()).unwrap();
        assert_eq!(loss.breakdown.regression(), 0.0);
        assert!(loss.breakdown.classification() < 1e-12);
    }

    #[test]
    fn empty_ground_truth_is_pure_no_object_cross_entropy() {
        let logits = Matrix::from_fn(4, 2, |r, c| (r as f64 - c as f64) * 0.3);
        let mut tape = Tape::new();
        let s = stage(&mut tape, Matrix::filled(4, 10, 0.5), logits.clone(), Matrix::zeros(4, 3));
        let loss = set_loss(&mut tape, &[s], &[], &LossConfig::default()).unwrap();
        let mut want = 0.0;
        for r in 0..4 {
            let row = logits.row(r);
            let lse = (row[0].exp() + row[1].exp()).ln();
            want += (lse - row[1]) / 4.0;
        }
        assert_eq!(loss.breakdown.regression(), 0.0);
        assert!((loss.breakdown.total - want).abs() < 1e-12);
    }

    #[test]
    fn regression_weight_is_linear() {
        let gt = vec![gt_box(1.0, 2.0)];
        let boxes = Matrix::from_fn(2, 10, |r, c| (r * 10 + c) as f64 * 0.1);
        let logits = Matrix::from_fn(2, 2, |r, c| (r + c) as f64 * 0.2);
        let run = |lambda: f64| {
            let mut tape = Tape::new();
            let s = stage(&mut tape, boxes.clone(), logits.clone(), Matrix::zeros(2, 3));
            let cfg = LossConfig {
                regression: lambda,
                cost: CostWeights { regression: 1.0, classification: 1.0 },
                ..Default::default()
            };
            set_loss(&mut tape, &[s], &gt, &cfg).unwrap().breakdown
        };
        let (a, b) = (run(1.0), run(2.0));
        assert_eq!(2.0 * a.regression(), b.regression());
        assert_eq!(a.classification(), b.classification());
    }
}
