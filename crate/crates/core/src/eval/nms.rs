use super::iou::oriented_bev_iou;
use super::metrics::{score_order, ScoredBox};

/// Greedy class-aware suppression within each scene: walking in descending
/// score order, a box is dropped when its BEV IoU with an already kept box
/// of the same class exceeds `min_overlap`. Survivors keep their input order.
pub fn nms(dets: &[ScoredBox], min_overlap: f64) -> Vec<ScoredBox> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        let d = &dets[i];
        let suppressed = kept.iter().any(|&k| {
            let o = &dets[k];
            o.scene == d.scene && o.bbox.class_id == d.bbox.class_id && oriented_bev_iou(&o.bbox, &d.bbox) > min_overlap
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| dets[i].clone()).collect()
}
