//! Oriented rectangle overlap in the ground plane.

use crate::scene::GroundTruthBox;

type Pt = (f64, f64);

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Shoelace area of a simple polygon (positive when counter-clockwise).
pub fn polygon_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        / 2.0
}

fn line_hit(p: Pt, q: Pt, a: Pt, b: Pt) -> Pt {
    let (d1, d2) = (cross(a, b, p), cross(a, b, q));
    let t = d1 / (d1 - d2);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Sutherland–Hodgman clip of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (pin, qin) = (cross(a, b, p) >= 0.0, cross(a, b, q) >= 0.0);
            match (pin, qin) {
                (true, true) => out.push(q),
                (true, false) => out.push(line_hit(p, q, a, b)),
                (false, true) => {
                    out.push(line_hit(p, q, a, b));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Intersection over union of the two yawed footprints; `0` when either
/// box has zero area.
pub fn oriented_bev_iou(a: &GroundTruthBox, b: &GroundTruthBox) -> f64 {
    let area_a = a.width * a.length;
    let area_b = b.width * b.length;
    if !(area_a > 0.0 && area_b > 0.0) {
        return 0.0;
    }
    let r = a.footprint_radius() + b.footprint_radius();
    let (dx, dy) = (a.center.x - b.center.x, a.center.y - b.center.y);
    if dx * dx + dy * dy > r * r {
        return 0.0;
    }
    let inter = polygon_area(&clip_convex(&a.corners(), &b.corners())).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// 3D IoU after moving `b` onto `a`'s center and heading: only sizes differ.
pub fn aligned_iou(a: &GroundTruthBox, b: &GroundTruthBox) -> f64 {
    let inter = a.width.min(b.width) * a.length.min(b.length) * a.height.min(b.height);
    let union = a.width * a.length * a.height + b.width * b.length * b.height - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
