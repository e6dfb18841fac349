//! Minimum-cost bipartite matching of ground-truth boxes to queries.

use crate::decoder::BoxParams;
use crate::error::{Error, Result};
use crate::scene::{GroundTruthBox, Point3};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    /// `(gt_index, query_index)` sorted by gt index.
    pub pairs: Vec<(usize, usize)>,
    /// Ascending.
    pub unmatched_queries: Vec<usize>,
}

impl MatchResult {
    pub fn total_cost(&self, cost: &Matrix<f64>) -> f64 {
        self.pairs.iter().map(|&(g, q)| cost.get(g, q)).sum()
    }

    /// Gt index matched to each query.
    pub fn query_targets(&self, queries: usize) -> Vec<Option<usize>> {
        let mut t = vec![None; queries];
        for &(g, q) in &self.pairs {
            t[q] = Some(g);
        }
        t
    }
}

/// Rectangular Hungarian algorithm with row/column potentials, `O(G² M)`.
pub fn hungarian_match(cost: &Matrix<f64>) -> Result<MatchResult> {
    let (n, m) = cost.shape();
    if n > m {
        return Err(Error::Assignment { rows: n, cols: m });
    }
    if let Some(v) = cost.as_slice().iter().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("non-finite matching cost {v}")));
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row (1-based) assigned to column j; way[j]: previous column on
    // the augmenting path.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    let unmatched_queries = (1..=m).filter(|&j| p[j] == 0).map(|j| j - 1).collect();
    Ok(MatchResult { pairs, unmatched_queries })
}

/// `(x, y, z, w, l, h, sin γ, cos γ, vx, vy)` of a ground-truth box.
pub fn box_vector(b: &GroundTruthBox) -> [f64; 10] {
    let (s, c) = b.yaw.sin_cos();
    [b.center.x, b.center.y, b.center.z, b.width, b.length, b.height, s, c, b.vx, b.vy]
}

/// Absolute regression vector of a prediction.
pub fn prediction_vector(p: &BoxParams, anchor: Point3) -> [f64; 10] {
    let c = p.center(anchor);
    [c.x, c.y, c.z, p.w, p.l, p.h, p.sin_yaw, p.cos_yaw, p.vx, p.vy]
}

/// Matching weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub regression: f64,
    pub classification: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { regression: 1.0, classification: 1.0 }
    }
}

/// `cost(g, q) = λ_reg ‖v_q − v_g‖₁ + λ_cls (1 − p_q(class_g))`.
pub fn build_cost_matrix(
    gt: &[GroundTruthBox],
    predictions: &[BoxParams],
    anchors: &[Point3],
    weights: CostWeights,
) -> Matrix<f64> {
    assert_eq!(predictions.len(), anchors.len(), "one anchor per prediction");
    let pred: Vec<([f64; 10], Vec<f64>)> =
        predictions.iter().zip(anchors).map(|(p, &a)| (prediction_vector(p, a), p.probabilities())).collect();
    Matrix::from_fn(gt.len(), predictions.len(), |g, q| {
        let target = box_vector(&gt[g]);
        let (v, probs) = &pred[q];
        let l1: f64 = v.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum();
        let p = probs.get(gt[g].class_id).copied().unwrap_or(0.0);
        weights.regression * l1 + weights.classification * (1.0 - p)
    })
}
