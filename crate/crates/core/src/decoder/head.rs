//! Shared box estimation head, anchor refinement and the anchor alignment
//! module.

use rand::Rng;

use crate::autodiff::{softmax_in_place, Tape, Var};
use crate::encoding::anchors_matrix;
use crate::params::{Binding, Group, Linear, Norm, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::scene::{GroundTruthBox, Point3};
use crate::tensor::Matrix;

/// Regressed quantities per query: `(Δx, Δy, Δz, w, l, h, sin γ, cos γ, vx, vy)`.
pub const BOX_DIM: usize = 10;
/// Offset of `(w, l, h, sin γ, cos γ, vx, vy)` in the regression vector.
pub const SHAPE_OFFSET: usize = 3;
pub const SHAPE_DIM: usize = BOX_DIM - SHAPE_OFFSET;

/// Smallest box dimension emitted for a detection.
const MIN_EXTENT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimationHeadParams {
    pub norm: Norm,
    pub hidden: Linear,
    pub regressor: Linear,
    pub classifier: Linear,
    /// Fixed `[1, 10]` per-component multiplier on the regressor output.
    pub output_scale: ParamId,
}

impl EstimationHeadParams {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let g = Group::Head;
        Self {
            norm: Norm::new(store, "head.norm", g, dim),
            hidden: Linear::new(store, "head.hidden", g, dim, dim, rng),
            regressor: Linear::new(store, "head.regressor", g, dim, BOX_DIM, rng),
            classifier: Linear::new(store, "head.classifier", g, dim, num_classes + 1, rng),
            output_scale: store.add("head.output_scale", Group::Fixed, Matrix::filled(1, BOX_DIM, T::one())),
        }
    }

    /// Scales the regressed location deltas by `delta_scale` meters per unit
    /// and starts the size outputs at `size_prior` with heading `(0, 1)`.
    pub fn set_output_prior<T: Scalar>(&self, store: &mut ParamStore<T>, delta_scale: f64, size_prior: [f64; 3]) {
        let scale = store.value_mut(self.output_scale);
        scale.set(0, 0, T::lit(delta_scale));
        scale.set(0, 1, T::lit(delta_scale));
        let bias = store.value_mut(self.regressor.bias);
        for (k, &v) in size_prior.iter().enumerate() {
            bias.set(0, SHAPE_OFFSET + k, T::lit(v));
        }
        bias.set(0, SHAPE_OFFSET + 4, T::one());
    }
}

/// Head evaluation for all queries of one decoder stage.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `[M, 3]` anchors the deltas are relative to.
    pub anchors: Var,
    /// `[M, 10]` raw regression vector.
    pub boxes: Var,
    /// `[M, 3]` location deltas.
    pub deltas: Var,
    /// `[M, 3]` absolute centers `Δ + ρ`.
    pub centers: Var,
    /// `[M, 7]` `(w, l, h, sin γ, cos γ, vx, vy)`.
    pub shape: Var,
    /// `[M, C + 1]`; the last column is 'no-object'.
    pub logits: Var,
}

pub fn head_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Binding,
    head: &EstimationHeadParams,
    tokens: Var,
    anchors: Var,
) -> HeadOutput {
    let n = head.norm.forward(tape, p, tokens);
    let h = head.hidden.forward(tape, p, n);
    let h = tape.relu(h);
    let raw = head.regressor.forward(tape, p, h);
    let scale = tape.value(p.var(head.output_scale));
    let diag = Matrix::from_fn(BOX_DIM, BOX_DIM, |r, c| if r == c { scale.get(0, c) } else { T::zero() });
    let diag = tape.constant(diag);
    let boxes = tape.matmul(raw, diag);
    let logits = head.classifier.forward(tape, p, h);
    let deltas = tape.slice_cols(boxes, 0, 3);
    let centers = tape.add(anchors, deltas);
    let shape = tape.slice_cols(boxes, SHAPE_OFFSET, SHAPE_DIM);
    HeadOutput { anchors, boxes, deltas, centers, shape, logits }
}

/// Decoded head output of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxParams {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub sin_yaw: f64,
    pub cos_yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub class_logits: Vec<f64>,
}

impl BoxParams {
    pub fn from_rows<T: Scalar>(boxes: &[T], logits: &[T]) -> Self {
        let b: Vec<f64> = boxes.iter().map(|v| v.as_f64()).collect();
        Self {
            dx: b[0],
            dy: b[1],
            dz: b[2],
            w: b[3],
            l: b[4],
            h: b[5],
            sin_yaw: b[6],
            cos_yaw: b[7],
            vx: b[8],
            vy: b[9],
            class_logits: logits.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn deltas(&self) -> Point3 {
        Point3::new(self.dx, self.dy, self.dz)
    }

    pub fn center(&self, anchor: Point3) -> Point3 {
        anchor + self.deltas()
    }

    /// `atan2` of the unit-normalized `(sin, cos)` pair; `0` for a zero pair.
    pub fn yaw(&self) -> f64 {
        let norm = self.sin_yaw.hypot(self.cos_yaw);
        if norm == 0.0 {
            return 0.0;
        }
        let yaw = (self.sin_yaw / norm).atan2(self.cos_yaw / norm);
        if yaw >= std::f64::consts::PI {
            -std::f64::consts::PI
        } else {
            yaw
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut p = self.class_logits.clone();
        softmax_in_place(&mut p);
        p
    }

    /// Index of the largest logit (lowest index on ties).
    pub fn argmax_class(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.class_logits.iter().enumerate() {
            if v > self.class_logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_no_object(&self) -> bool {
        self.argmax_class() + 1 == self.class_logits.len()
    }

    /// Absolute box; sizes are clamped to stay positive.
    pub fn to_box(&self, anchor: Point3) -> GroundTruthBox {
        GroundTruthBox {
            center: self.center(anchor),
            width: self.w.max(MIN_EXTENT),
            length: self.l.max(MIN_EXTENT),
            height: self.h.max(MIN_EXTENT),
            yaw: self.yaw(),
            vx: self.vx,
            vy: self.vy,
            class_id: self.argmax_class(),
        }
    }
}

/// Reads the decoded boxes of one head output.
pub fn decode_head<T: Scalar>(tape: &Tape<T>, out: &HeadOutput) -> Vec<BoxParams> {
    let (b, l) = (tape.value(out.boxes), tape.value(out.logits));
    (0..b.rows()).map(|r| BoxParams::from_rows(b.row(r), l.row(r))).collect()
}

/// Box estimate of a single token: raw parameters and the absolute box.
pub fn estimation_head<T: Scalar>(
    store: &ParamStore<T>,
    head: &EstimationHeadParams,
    token: &[T],
    anchor: Point3,
) -> (BoxParams, GroundTruthBox) {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, |_| false);
    let z = tape.constant(Matrix::row_vector(token));
    let a = tape.constant(anchors_matrix(&[anchor]));
    let out = head_forward(&mut tape, &p, head, z, a);
    let params = decode_head(&tape, &out).remove(0);
    let b = params.to_box(anchor);
    (params, b)
}

/// `ρ^{(k+1)} = Δ(z) + ρ^{(k)}` for every query.
pub fn refine_anchors<T: Scalar>(
    store: &ParamStore<T>,
    head: &EstimationHeadParams,
    tokens: &Matrix<T>,
    anchors: &[Point3],
) -> Vec<Point3> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, |_| false);
    let z = tape.constant(tokens.clone());
    let a = tape.constant(anchors_matrix(anchors));
    let out = head_forward(&mut tape, &p, head, z, a);
    let c = tape.value(out.centers);
    (0..c.rows()).map(|r| Point3::new(c.get(r, 0).as_f64(), c.get(r, 1).as_f64(), c.get(r, 2).as_f64())).collect()
}

/// Anchor alignment module: `z + W₂ ReLU(W₁ z + b₁) + b₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AamParams {
    pub hidden: Linear,
    pub output: Linear,
}

impl AamParams {
    /// Random hidden layer, zero output layer: the module starts as the
    /// identity yet can still learn.
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, dim: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, "aam.hidden", Group::Aam, dim, dim, rng),
            output: Linear::zeros(store, "aam.output", Group::Aam, dim, dim),
        }
    }
}

pub fn aam_forward<T: Scalar>(tape: &mut Tape<T>, p: &Binding, aam: &AamParams, tokens: Var) -> Var {
    let h = aam.hidden.forward(tape, p, tokens);
    let h = tape.relu(h);
    let r = aam.output.forward(tape, p, h);
    tape.add(tokens, r)
}

/// Value-level [`aam_forward`] for one token.
pub fn anchor_align<T: Scalar>(store: &ParamStore<T>, aam: &AamParams, token: &[T]) -> Vec<T> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, |_| false);
    let z = tape.constant(Matrix::row_vector(token));
    let out = aam_forward(&mut tape, &p, aam, z);
    tape.value(out).row(0).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_group<T: Scalar>(store: &mut ParamStore<T>, group: Group) {
        for id in store.ids_in(group) {
            store.value_mut(id).scale_in_place(T::zero());
        }
    }

    #[test]
    fn zero_head_centers_on_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let head = EstimationHeadParams::new(&mut store, 8, 1, &mut rng);
        zero_group(&mut store, Group::Head);
        let anchor = Point3::new(3.0, -2.0, 0.5);
        let (params, b) = estimation_head(&store, &head, &[0.3; 8], anchor);
        assert_eq!(params.deltas(), Point3::default());
        assert_eq!(b.center, anchor);
        let refined = refine_anchors(&store, &head, &Matrix::filled(2, 8, 1.0), &[anchor, Point3::default()]);
        assert_eq!(refined, vec![anchor, Point3::default()]);
    }

    #[test]
    fn center_is_anchor_plus_deltas() {
        let p = BoxParams {
            dx: 0.5,
            dy: -0.5,
            dz: 0.1,
            w: 1.0,
            l: 2.0,
            h: 1.0,
            sin_yaw: 2.0,
            cos_yaw: 0.0,
            vx: 0.0,
            vy: 0.0,
            class_logits: vec![1.0, 0.0],
        };
        let c = p.center(Point3::new(1.0, 2.0, 0.0));
        assert!((c.x - 1.5).abs() < 1e-12 && (c.y - 1.5).abs() < 1e-12 && (c.z - 0.1).abs() < 1e-12);
        assert!((p.yaw() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(!p.is_no_object());
    }

    #[test]
    fn refinement_moves_anchor_by_the_deltas() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let head = EstimationHeadParams::new(&mut store, 4, 1, &mut rng);
        zero_group(&mut store, Group::Head);
        store.value_mut(head.regressor.bias).as_mut_slice()[..3].copy_from_slice(&[3.0, 4.0, 0.0]);
        let refined = refine_anchors(&store, &head, &Matrix::filled(1, 4, 0.2), &[Point3::default()]);
        assert_eq!(refined[0], Point3::new(3.0, 4.0, 0.0));
        assert_eq!(refined[0].distance(&Point3::default()), 5.0);
    }

    #[test]
    fn zero_aam_is_identity() {
        for d in [8, 256] {
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let mut store = ParamStore::<f32>::new();
            let aam = AamParams::new(&mut store, d, &mut rng);
            let z: Vec<f32> = (0..d).map(|i| (i as f32 * 0.37).sin()).collect();
            // fresh module: zero output layer
            assert_eq!(anchor_align(&store, &aam, &z), z);
            zero_group(&mut store, Group::Aam);
            let out = anchor_align(&store, &aam, &z);
            assert_eq!(out.len(), d);
            assert_eq!(out, z);
        }
    }
}
