//! Fourier anchor encoding and the sinusoidal grid positional encoding.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{normal_matrix, Binding, Group, Linear, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::scene::Point3;
use crate::tensor::Matrix;

const GRID_TEMPERATURE: f64 = 10000.0;

/// Fixed random projection `B ∈ R^{d/2 x 3}` applied to anchor coordinates
/// in meters. Entries are `N(0, 1) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierBasis {
    pub matrix: ParamId,
    pub scale: f64,
}

impl FourierBasis {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, dim: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(format!("Fourier encoding needs an even dimension, got {dim}")));
        }
        let mut b: Matrix<T> = normal_matrix(dim / 2, 3, 1.0, rng);
        b.scale_in_place(T::lit(scale));
        let matrix = store.add("anchor_encoder.fourier_basis", Group::Fixed, b);
        Ok(Self { matrix, scale })
    }

    /// Default scale `2π / L` for a scene of side length `L` meters.
    pub fn extent_scale(side: f64) -> f64 {
        2.0 * std::f64::consts::PI / side
    }
}

/// The two-layer ReLU network mapping Fourier features to query tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorEncoderParams {
    pub hidden: Linear,
    pub output: Linear,
}

impl AnchorEncoderParams {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, dim: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, "anchor_encoder.hidden", Group::AnchorEncoder, dim, dim, rng),
            output: Linear::new(store, "anchor_encoder.output", Group::AnchorEncoder, dim, dim, rng),
        }
    }
}

/// `[sin(B ρ), cos(B ρ)]` for every row of the `[M, 3]` anchor node.
pub fn fourier_features<T: Scalar>(tape: &mut Tape<T>, p: &Binding, basis: &FourierBasis, anchors: Var) -> Var {
    let proj = tape.matmul_bt(anchors, p.var(basis.matrix));
    let s = tape.sin(proj);
    let c = tape.cos(proj);
    tape.concat_cols(&[s, c])
}

/// Query tokens `FFN([sin(B ρ), cos(B ρ)])` for an `[M, 3]` anchor node.
pub fn encode_anchors<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Binding,
    basis: &FourierBasis,
    ffn: &AnchorEncoderParams,
    anchors: Var,
) -> Var {
    let f = fourier_features(tape, p, basis, anchors);
    let h = ffn.hidden.forward(tape, p, f);
    let h = tape.relu(h);
    ffn.output.forward(tape, p, h)
}

pub fn anchors_matrix<T: Scalar>(anchors: &[Point3]) -> Matrix<T> {
    Matrix::from_fn(anchors.len(), 3, |r, c| {
        let a = anchors[r];
        T::lit([a.x, a.y, a.z][c])
    })
}

/// Fourier features of a single location.
pub fn fourier_features_at<T: Scalar>(store: &ParamStore<T>, basis: &FourierBasis, rho: Point3) -> Vec<T> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, |_| false);
    let a = tape.constant(anchors_matrix(&[rho]));
    let f = fourier_features(&mut tape, &p, basis, a);
    tape.value(f).row(0).to_vec()
}

/// Encoded query token of a single location.
pub fn encode_anchor<T: Scalar>(
    store: &ParamStore<T>,
    basis: &FourierBasis,
    ffn: &AnchorEncoderParams,
    rho: Point3,
) -> Vec<T> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, |_| false);
    let a = tape.constant(anchors_matrix(&[rho]));
    let y = encode_anchors(&mut tape, &p, basis, ffn, a);
    tape.value(y).row(0).to_vec()
}

/// Two-axis sinusoidal encoding of BEV cell centers, `d/2` dims per axis.
///
/// Rows are cells in row-major order (`row * width + col`), where `col`
/// advances along x and `row` along y. Columns `0..d/2` encode x and
/// `d/2..d` encode y, each as interleaved `(sin, cos)` pairs over a geometric
/// frequency progression with temperature 10000. Coordinates are cell
/// centers in meters relative to the grid origin.
pub fn grid_positional_encoding<T: Scalar>(
    height: usize,
    width: usize,
    cell_size: f64,
    dim: usize,
) -> Result<Matrix<T>> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::Config(format!("grid positional encoding needs d divisible by 4, got {dim}")));
    }
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::Config(format!("cell size must be positive, got {cell_size}")));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half / 2).map(|k| GRID_TEMPERATURE.powf(-((2 * k) as f64) / half as f64)).collect();
    let mut out = Matrix::zeros(height * width, dim);
    for i in 0..height {
        let y = (i as f64 + 0.5) * cell_size;
        for j in 0..width {
            let x = (j as f64 + 0.5) * cell_size;
            let row = out.row_mut(i * width + j);
            for (k, &f) in freqs.iter().enumerate() {
                row[2 * k] = T::lit((x * f).sin());
                row[2 * k + 1] = T::lit((x * f).cos());
                row[half + 2 * k] = T::lit((y * f).sin());
                row[half + 2 * k + 1] = T::lit((y * f).cos());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, seed: u64) -> (ParamStore<f64>, FourierBasis, AnchorEncoderParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let basis = FourierBasis::new(&mut store, dim, FourierBasis::extent_scale(100.0), &mut rng).unwrap();
        let ffn = AnchorEncoderParams::new(&mut store, dim, &mut rng);
        (store, basis, ffn)
    }

    #[test]
    fn origin_maps_to_zero_sines_unit_cosines() {
        let (store, basis, _) = setup(16, 1);
        let f = fourier_features_at(&store, &basis, Point3::default());
        assert!(f[..8].iter().all(|&v| v == 0.0));
        assert!(f[8..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn parity_and_range() {
        let (store, basis, _) = setup(16, 2);
        let rho = Point3::new(12.5, -31.0, 1.2);
        let f = fourier_features_at(&store, &basis, rho);
        let g = fourier_features_at(&store, &basis, Point3::new(-rho.x, -rho.y, -rho.z));
        for k in 0..8 {
            assert!((f[k] + g[k]).abs() < 1e-12);
            assert!((f[8 + k] - g[8 + k]).abs() < 1e-12);
        }
        assert!(f.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_ffn_gives_zero_tokens() {
        let (mut store, basis, ffn) = setup(8, 3);
        for id in [ffn.hidden.weight, ffn.hidden.bias, ffn.output.weight, ffn.output.bias] {
            store.value_mut(id).scale_in_place(0.0);
        }
        let y = encode_anchor(&store, &basis, &ffn, Point3::new(3.0, 4.0, 0.5));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_ffn_is_relu_of_features() {
        let (mut store, basis, ffn) = setup(8, 4);
        *store.value_mut(ffn.hidden.weight) = Matrix::identity(8);
        *store.value_mut(ffn.output.weight) = Matrix::identity(8);
        let rho = Point3::new(-7.0, 22.0, 1.0);
        let f = fourier_features_at(&store, &basis, rho);
        let y = encode_anchor(&store, &basis, &ffn, rho);
        for (a, b) in f.iter().zip(&y) {
            assert_eq!(a.max(0.0).max(0.0), *b);
        }
    }

    #[test]
    fn distinct_anchors_get_distinct_tokens() {
        let (store, basis, ffn) = setup(16, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let mut pt = || {
                Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(0.0..2.0))
            };
            let (a, b) = (pt(), pt());
            assert_ne!(encode_anchor(&store, &basis, &ffn, a), encode_anchor(&store, &basis, &ffn, b));
        }
    }

    #[test]
    fn rejects_odd_dimension() {
        let mut store = ParamStore::<f32>::new();
        assert!(FourierBasis::new(&mut store, 7, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(grid_positional_encoding::<f32>(2, 2, 1.0, 6).is_err());
    }

    #[test]
    fn grid_encoding_properties() {
        let single = grid_positional_encoding::<f64>(1, 1, 2.0, 8).unwrap();
        assert_eq!(single.shape(), (1, 8));
        assert!(single.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));

        let pe = grid_positional_encoding::<f64>(4, 5, 1.5, 16).unwrap();
        // one step in x: only the x half changes
        let (a, b) = (pe.row(2 * 5 + 1), pe.row(2 * 5 + 2));
        assert_eq!(&a[8..], &b[8..]);
        assert_ne!(&a[..8], &b[..8]);

        let big = grid_positional_encoding::<f64>(32, 32, 1.0, 16).unwrap();
        for i in 0..big.rows() {
            for j in i + 1..big.rows() {
                assert_ne!(big.row(i), big.row(j), "cells {i} and {j}");
            }
        }
    }
}
