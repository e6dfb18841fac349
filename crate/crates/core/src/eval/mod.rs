//! Detection metrics, suppression analysis and query travel statistics.

pub mod iou;
pub mod metrics;
pub mod nms;
pub mod report;
pub mod travel;

pub use iou::{aligned_iou, oriented_bev_iou};
pub use metrics::{compute_metrics, match_detections, MetricsReport, ScoredBox, DISTANCE_THRESHOLDS, TP_THRESHOLD};
pub use nms::nms;
pub use travel::{travel_length_stats, TravelBin, TravelKind, TravelRecord};

use crate::decoder::Detector;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::scene::{GroundTruthBox, Scene};

/// Detections of a model over an evaluation split.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub detections: Vec<ScoredBox>,
    /// First and latest anchor travel of each detection, aligned with
    /// `detections`.
    pub travel: Vec<(f64, f64)>,
    pub ground_truth: Vec<Vec<GroundTruthBox>>,
    pub num_classes: usize,
}

impl EvalRun {
    pub fn metrics(&self) -> MetricsReport {
        mean_metrics(&self.detections, &self.ground_truth, self.num_classes)
    }

    pub fn with_nms(&self, min_overlap: f64) -> EvalRun {
        let kept = nms(&self.detections, min_overlap);
        let mut travel = Vec::with_capacity(kept.len());
        let mut j = 0;
        for (d, t) in self.detections.iter().zip(&self.travel) {
            if j < kept.len() && *d == kept[j] {
                travel.push(*t);
                j += 1;
            }
        }
        EvalRun { detections: kept, travel, ground_truth: self.ground_truth.clone(), num_classes: self.num_classes }
    }

    /// Travel records with the true-positive center error at the 2 m
    /// threshold.
    pub fn travel_records(&self) -> Vec<TravelRecord> {
        let matches = match_detections(&self.detections, &self.ground_truth, TP_THRESHOLD);
        self.detections
            .iter()
            .zip(&self.travel)
            .zip(matches)
            .map(|((d, &(fq, lq)), m)| TravelRecord {
                scene: d.scene,
                fq,
                lq,
                error: m.map(|g| self.ground_truth[d.scene][g].center.bev_distance(&d.bbox.center)),
            })
            .collect()
    }
}

pub fn run_detector<T: Scalar>(det: &Detector<T>, scenes: &[Scene]) -> Result<EvalRun> {
    let mut detections = Vec::new();
    let mut travel = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        for d in det.detect(scene)? {
            travel.push((d.first_anchor.bev_distance(&d.bbox.center), d.last_anchor.bev_distance(&d.bbox.center)));
            detections.push(ScoredBox { scene: i, bbox: d.bbox, score: d.score });
        }
    }
    Ok(EvalRun {
        detections,
        travel,
        ground_truth: scenes.iter().map(|s| s.boxes.clone()).collect(),
        num_classes: det.config.decoder.num_classes,
    })
}

/// Class-averaged metrics over classes that have ground truth (class 0 when
/// none has).
pub fn mean_metrics(dets: &[ScoredBox], gts: &[Vec<GroundTruthBox>], num_classes: usize) -> MetricsReport {
    let present: Vec<usize> =
        (0..num_classes.max(1)).filter(|&c| gts.iter().flatten().any(|b| b.class_id == c)).collect();
    if present.len() <= 1 {
        return compute_metrics(dets, gts, present.first().copied().unwrap_or(0));
    }
    let reports: Vec<MetricsReport> = present.iter().map(|&c| compute_metrics(dets, gts, c)).collect();
    MetricsReport::mean(&reports).expect("at least two classes present")
}
