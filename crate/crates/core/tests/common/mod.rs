//! Reference implementations and fixtures shared by the integration tests
//! and the acceptance runner.

#![allow(dead_code)]

use anchordet::training::{scene_gradients, LossConfig};
use anchordet::{
    generate_scene, ClassSpec, Detector64, DetectorConfig, Extent, GroundTruthBox, Group, Matrix64, Point3,
    RefineSchedule, Scene, SceneConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Costs on a 1/1024 grid so that every summation order is exact.
pub fn quantized_costs(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix64 {
    Matrix64::from_fn(rows, cols, |_, _| rng.random_range(0..10_240) as f64 / 1024.0)
}

/// Minimum total cost over every injective row-to-column assignment.
/// Costs are non-negative, so partial sums already at the best total are cut.
pub fn brute_force_assignment(cost: &Matrix64) -> f64 {
    fn go(cost: &Matrix64, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if row == cost.rows() {
            *best = best.min(acc);
            return;
        }
        for c in 0..cost.cols() {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, used, acc + cost.get(row, c), best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.cols()], 0.0, &mut best);
    best
}

/// Greedy farthest-point selection written directly from its definition:
/// each step rescans every point for the largest distance to the chosen set.
pub fn reference_fps(points: &[Point3], count: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < count.min(points.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let d = chosen.iter().map(|&c| p.distance(&points[c])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

pub fn random_cloud(rng: &mut impl Rng, n: usize, side: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| Point3::new(rng.random_range(-side..side), rng.random_range(-side..side), rng.random_range(-1.0..3.0)))
        .collect()
}

pub fn random_box(rng: &mut impl Rng, spread: f64) -> GroundTruthBox {
    GroundTruthBox {
        center: Point3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), 0.8),
        width: rng.random_range(0.5..3.0),
        length: rng.random_range(0.5..6.0),
        height: rng.random_range(0.5..2.5),
        yaw: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        vx: 0.0,
        vy: 0.0,
        class_id: 0,
    }
}

/// BEV intersection-over-union estimated from `samples` uniform points in
/// the joint bounding rectangle.
pub fn monte_carlo_bev_iou(a: &GroundTruthBox, b: &GroundTruthBox, samples: usize, rng: &mut impl Rng) -> f64 {
    let corners: Vec<(f64, f64)> = a.corners().into_iter().chain(b.corners()).collect();
    let (x0, x1) = corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.0), hi.max(c.0)));
    let (y0, y1) = corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.1), hi.max(c.1)));
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        let (ia, ib) = (a.footprint_contains(x, y), b.footprint_contains(x, y));
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Small scenes for the micro detector (8 m extent, N = 16 cells).
pub fn micro_scene(seed: u64) -> Scene {
    let config = SceneConfig {
        extent: Extent::square(8.0),
        min_objects: 1,
        max_objects: 2,
        classes: vec![ClassSpec { width: 0.8, length: 1.2, height: 1.5, jitter: 0.1 }],
        surface_density: 6.0,
        min_points_per_box: 8,
        clutter_points: 30,
        ..SceneConfig::default()
    };
    generate_scene(&config, seed).expect("micro scene")
}

pub fn micro_detector(seed: u64, refine: RefineSchedule) -> Detector64 {
    let mut cfg = DetectorConfig::micro();
    cfg.decoder.refine = refine;
    Detector64::new(cfg, seed).expect("micro detector")
}

/// The micro detector widened to `d = 32`. At `d = 8` the token cannot move
/// three head outputs to zero while holding the other nine fixed.
pub fn aam_detector(seed: u64, refine: RefineSchedule) -> Detector64 {
    let mut cfg = DetectorConfig::profile(Extent::square(8.0), 4, 32, 2, 2, 3);
    cfg.delta_scale = 1.0;
    cfg.size_prior = [1.0, 1.5, 1.0];
    cfg.decoder.refine = refine;
    Detector64::new(cfg, seed).expect("aam detector")
}

/// Worst per-tensor relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖, 1e-5)` between
/// analytic gradients and central finite differences of the full set loss,
/// over every trainable parameter.
pub fn finite_difference_error(det: &Detector64, scene: &Scene, eps: f64) -> (f64, String) {
    let loss_cfg = LossConfig::default();
    let trainable = |g: Group| g.trainable();
    let (analytic, _) = scene_gradients(det, scene, &loss_cfg, trainable).expect("gradients");
    let loss_at = |d: &Detector64| scene_gradients(d, scene, &loss_cfg, |_| false).expect("loss").1.total;
    let mut probe = det.clone();
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = det.params.iter().map(|(id, p)| (id, p.group, p.name.clone())).collect();
    for (id, group, name) in ids {
        if !group.trainable() {
            continue;
        }
        let n = det.params.value(id).len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = det.params.value(id).as_slice()[i];
            probe.params.value_mut(id).as_mut_slice()[i] = orig + eps;
            let up = loss_at(&probe);
            probe.params.value_mut(id).as_mut_slice()[i] = orig - eps;
            let down = loss_at(&probe);
            probe.params.value_mut(id).as_mut_slice()[i] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let g = analytic[id.index()].as_slice();
        let diff: f64 = g.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let na = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / na.max(nn).max(1e-5);
        if rel > worst.0 {
            worst = (rel, name);
        }
    }
    worst
}

pub fn fmt_duration(d: std::time::Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}
