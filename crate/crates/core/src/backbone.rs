//! Pillar-grid feature extractor producing the `N = H * W` token sequence
//! that serves as decoder keys and values.
//!
//! Each point is lifted to `(x, y, z, x - cx, y - cy, z - z̄)`, passed
//! through an affine + ReLU layer, max-pooled per pillar, then mixed by a
//! single 3x3 BEV convolution with ReLU. Empty pillars take a learned vector.
//! The grid positional encoding is added last. Tokens are flattened
//! row-major: token `row * W + col`, where `col` advances along x.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::encoding::grid_positional_encoding;
use crate::error::{Error, Result};
use crate::params::{Binding, Group, Linear, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::scene::{Extent, Scene};
use crate::tensor::Matrix;

/// Per-point input feature width.
pub const POINT_FEATURES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub extent: Extent,
    pub cell_size: f64,
    pub feature_dim: usize,
    pub max_points_per_pillar: usize,
}

impl GridConfig {
    /// Square grid with `cells x cells` pillars covering `extent`.
    pub fn with_cells(extent: Extent, cells: usize, feature_dim: usize) -> Self {
        let side = extent.width().max(extent.depth());
        Self { extent, cell_size: side / cells as f64, feature_dim, max_points_per_pillar: 32 }
    }

    /// `(H, W)`: rows along y, columns along x.
    pub fn dims(&self) -> (usize, usize) {
        let w = (self.extent.width() / self.cell_size - 1e-9).ceil().max(1.0) as usize;
        let h = (self.extent.depth() / self.cell_size - 1e-9).ceil().max(1.0) as usize;
        (h, w)
    }

    pub fn num_tokens(&self) -> usize {
        let (h, w) = self.dims();
        h * w
    }

    pub fn validate(&self) -> Result<()> {
        self.extent.validate()?;
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::Config(format!("cell size must be positive, got {}", self.cell_size)));
        }
        if self.max_points_per_pillar == 0 {
            return Err(Error::Config("max points per pillar must be positive".into()));
        }
        if self.feature_dim == 0 || !self.feature_dim.is_multiple_of(4) {
            return Err(Error::Config(format!("feature dim must be divisible by 4, got {}", self.feature_dim)));
        }
        Ok(())
    }

    /// Cell of a BEV location; locations on the far border fold into the
    /// last row/column.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.extent.contains(x, y) {
            return None;
        }
        let (h, w) = self.dims();
        let col = (((x - self.extent.x_min) / self.cell_size) as usize).min(w - 1);
        let row = (((y - self.extent.y_min) / self.cell_size) as usize).min(h - 1);
        Some((row, col))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.extent.x_min + (col as f64 + 0.5) * self.cell_size,
            self.extent.y_min + (row as f64 + 0.5) * self.cell_size,
        )
    }
}

/// Bucketed points of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Pillars {
    /// `[kept points, 6]` raw features.
    pub features: Matrix<f64>,
    /// Flattened cell index of each kept point.
    pub cell_of_point: Vec<usize>,
    pub nonempty_mask: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

impl Pillars {
    pub fn points_in(&self, cell: usize) -> usize {
        self.cell_of_point.iter().filter(|&&c| c == cell).count()
    }
}

/// Buckets scene points into BEV pillars. Pillars with more than
/// `max_points_per_pillar` points keep a random subset drawn with `seed`.
pub fn pillarize(scene: &Scene, cfg: &GridConfig, seed: u64) -> Result<Pillars> {
    cfg.validate()?;
    let (h, w) = cfg.dims();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); h * w];
    for (i, p) in scene.points.iter().enumerate() {
        if let Some((r, c)) = cfg.cell_of(p.x, p.y) {
            members[r * w + c].push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut cell_of_point = Vec::new();
    let mut nonempty_mask = vec![false; h * w];
    for (cell, idx) in members.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() > cfg.max_points_per_pillar {
            let mut keep: Vec<usize> =
                sample(&mut rng, idx.len(), cfg.max_points_per_pillar).into_iter().map(|k| idx[k]).collect();
            keep.sort_unstable();
            *idx = keep;
        }
        nonempty_mask[cell] = true;
        let (cx, cy) = cfg.cell_center(cell / w, cell % w);
        let zbar = idx.iter().map(|&i| scene.points[i].z).sum::<f64>() / idx.len() as f64;
        for &i in idx.iter() {
            let p = scene.points[i];
            rows.extend_from_slice(&[p.x, p.y, p.z, p.x - cx, p.y - cy, p.z - zbar]);
            cell_of_point.push(cell);
        }
    }
    let n = cell_of_point.len();
    Ok(Pillars {
        features: Matrix::from_vec(n, POINT_FEATURES, rows)?,
        cell_of_point,
        nonempty_mask,
        height: h,
        width: w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneParams {
    pub point_layer: Linear,
    pub conv: Linear,
    pub empty: ParamId,
}

impl BackboneParams {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, dim: usize, rng: &mut R) -> Self {
        let point_layer = Linear::new(store, "backbone.point_layer", Group::Backbone, POINT_FEATURES, dim, rng);
        let conv = Linear::new(store, "backbone.conv3x3", Group::Backbone, 9 * dim, dim, rng);
        let empty = store.add(
            "backbone.empty",
            Group::Backbone,
            Matrix::from_fn(1, dim, |_, _| T::lit(rng.random_range(-0.1..0.1))),
        );
        Self { point_layer, conv, empty }
    }
}

/// Decoder keys/values of one scene on a tape.
#[derive(Debug, Clone)]
pub struct Tokens {
    /// `[N, d]`, positional encoding included.
    pub features: Var,
    pub cell_centers: Vec<(f64, f64)>,
    pub nonempty_mask: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

/// Value-level token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    pub features: Matrix<T>,
    pub cell_centers: Vec<(f64, f64)>,
    pub nonempty_mask: Vec<bool>,
}

/// Fixed rescaling of raw point features to O(1) magnitudes.
fn normalized_inputs<T: Scalar>(pillars: &Pillars, cfg: &GridConfig) -> Matrix<T> {
    let e = &cfg.extent;
    let (mx, my) = ((e.x_min + e.x_max) / 2.0, (e.y_min + e.y_max) / 2.0);
    let (sx, sy) = (2.0 / e.width(), 2.0 / e.depth());
    let sc = 1.0 / cfg.cell_size;
    Matrix::from_fn(pillars.features.rows(), POINT_FEATURES, |r, c| {
        let v = pillars.features.get(r, c);
        T::lit(match c {
            0 => (v - mx) * sx,
            1 => (v - my) * sy,
            3 | 4 => v * sc,
            _ => v,
        })
    })
}

pub fn backbone_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Binding,
    params: &BackboneParams,
    pillars: &Pillars,
    cfg: &GridConfig,
) -> Result<Tokens> {
    let (h, w) = (pillars.height, pillars.width);
    let d = cfg.feature_dim;
    if tape.shape(p.var(params.empty)) != (1, d) {
        return Err(Error::Shape(format!("backbone built for another feature dim than {d}")));
    }
    let inputs = tape.constant(normalized_inputs(pillars, cfg));
    let lifted = params.point_layer.forward(tape, p, inputs);
    let lifted = tape.relu(lifted);
    let pooled = tape.segment_max(lifted, &pillars.cell_of_point, h * w);
    let cols = tape.im2col3x3(pooled, h, w);
    let conv = params.conv.forward(tape, p, cols);
    let conv = tape.relu(conv);
    let filled = tape.mask_rows(conv, p.var(params.empty), &pillars.nonempty_mask);
    let pe = tape.constant(grid_positional_encoding(h, w, cfg.cell_size, d)?);
    let features = tape.add(filled, pe);
    let cell_centers = (0..h * w).map(|k| cfg.cell_center(k / w, k % w)).collect();
    Ok(Tokens { features, cell_centers, nonempty_mask: pillars.nonempty_mask.clone(), height: h, width: w })
}

/// Inference-only token computation.
pub fn compute_tokens<T: Scalar>(
    store: &ParamStore<T>,
    params: &BackboneParams,
    pillars: &Pillars,
    cfg: &GridConfig,
) -> Result<TokenSequence<T>> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, |_| false);
    let t = backbone_forward(&mut tape, &p, params, pillars, cfg)?;
    Ok(TokenSequence {
        features: tape.value(t.features).clone(),
        cell_centers: t.cell_centers,
        nonempty_mask: t.nonempty_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Point3;

    fn scene(points: Vec<Point3>, side: f64) -> Scene {
        Scene { points, boxes: vec![], extent: Extent::new(0.0, side, 0.0, side) }
    }

    fn grid(side: f64, cells: usize, d: usize) -> GridConfig {
        GridConfig::with_cells(Extent::new(0.0, side, 0.0, side), cells, d)
    }

    #[test]
    fn single_point_lands_in_first_cell() {
        let s = scene(vec![Point3::new(0.5, 0.5, 0.0)], 2.0);
        let p = pillarize(&s, &grid(2.0, 2, 4), 0).unwrap();
        assert_eq!(p.nonempty_mask, vec![true, false, false, false]);
        assert_eq!(p.features.row(0), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn far_border_folds_into_last_cell() {
        let s = scene(vec![Point3::new(2.0, 2.0, 0.0), Point3::new(1.5, 0.2, 1.0)], 2.0);
        let p = pillarize(&s, &grid(2.0, 2, 4), 0).unwrap();
        assert_eq!(p.nonempty_mask, vec![false, true, false, true]);
    }

    #[test]
    fn truncation_is_seeded() {
        let pts = vec![Point3::new(0.1, 0.1, 0.0), Point3::new(0.2, 0.3, 1.0), Point3::new(0.7, 0.4, 2.0)];
        let mut cfg = grid(2.0, 2, 4);
        cfg.max_points_per_pillar = 2;
        let s = scene(pts, 2.0);
        let a = pillarize(&s, &cfg, 7).unwrap();
        assert_eq!(a.points_in(0), 2);
        assert_eq!(a, pillarize(&s, &cfg, 7).unwrap());
        // z̄ is the mean over kept points
        let zs: Vec<f64> = (0..2).map(|r| a.features.get(r, 2)).collect();
        let zbar = (zs[0] + zs[1]) / 2.0;
        assert!((a.features.get(0, 5) - (zs[0] - zbar)).abs() < 1e-12);
    }

    fn backbone(d: usize, seed: u64) -> (ParamStore<f64>, BackboneParams) {
        let mut store = ParamStore::new();
        let params = BackboneParams::new(&mut store, d, &mut ChaCha8Rng::seed_from_u64(seed));
        (store, params)
    }

    #[test]
    fn empty_grid_is_empty_vector_plus_encoding() {
        let cfg = grid(4.0, 4, 8);
        let s = scene(vec![Point3::new(1.0, 1.0, 0.0)], 4.0);
        let mut p = pillarize(&s, &cfg, 0).unwrap();
        p.nonempty_mask = vec![false; 16];
        p.features = Matrix::zeros(0, POINT_FEATURES);
        p.cell_of_point.clear();
        let (store, params) = backbone(8, 1);
        let t = compute_tokens(&store, &params, &p, &cfg).unwrap();
        let pe = grid_positional_encoding::<f64>(4, 4, cfg.cell_size, 8).unwrap();
        let empty = store.value(params.empty);
        for r in 0..16 {
            for c in 0..8 {
                assert_eq!(t.features.get(r, c), empty.get(0, c) + pe.get(r, c));
            }
        }
    }

    #[test]
    fn point_order_within_pillar_is_irrelevant() {
        let cfg = grid(4.0, 4, 8);
        let pts = vec![Point3::new(1.2, 1.1, 0.3), Point3::new(1.7, 1.9, 1.3), Point3::new(1.4, 1.5, 0.9)];
        let mut rev = pts.clone();
        rev.reverse();
        let (store, params) = backbone(8, 2);
        let a = compute_tokens(&store, &params, &pillarize(&scene(pts, 4.0), &cfg, 0).unwrap(), &cfg).unwrap();
        let b = compute_tokens(&store, &params, &pillarize(&scene(rev, 4.0), &cfg, 0).unwrap(), &cfg).unwrap();
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn output_width_follows_feature_dim() {
        for d in [4, 8] {
            let cfg = grid(4.0, 4, d);
            let (store, params) = backbone(d, 3);
            let p = pillarize(&scene(vec![Point3::new(1.0, 2.0, 0.0)], 4.0), &cfg, 0).unwrap();
            assert_eq!(compute_tokens(&store, &params, &p, &cfg).unwrap().features.shape(), (16, d));
        }
    }

    #[test]
    fn changes_stay_inside_the_receptive_field() {
        let cfg = grid(6.0, 6, 4);
        let base = vec![
            Point3::new(0.5, 0.5, 0.1),
            Point3::new(3.5, 3.5, 0.4),
            Point3::new(4.5, 3.5, 1.0),
            Point3::new(5.5, 0.5, 0.2),
        ];
        let mut moved = base.clone();
        moved[1].z = 1.7;
        let (store, params) = backbone(4, 4);
        let a = compute_tokens(&store, &params, &pillarize(&scene(base, 6.0), &cfg, 0).unwrap(), &cfg).unwrap();
        let b = compute_tokens(&store, &params, &pillarize(&scene(moved, 6.0), &cfg, 0).unwrap(), &cfg).unwrap();
        let (r0, c0) = (3usize, 3usize);
        for k in 0..36usize {
            let (r, c) = (k / 6, k % 6);
            if r.abs_diff(r0) > 1 || c.abs_diff(c0) > 1 {
                assert_eq!(a.features.row(k), b.features.row(k), "token {k}");
            }
        }
    }
}
