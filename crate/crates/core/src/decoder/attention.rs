use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, Group, Linear, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Additive logit for masked keys.
const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl AttentionParams {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut R) -> Self {
        let g = Group::Decoder;
        Self {
            query: Linear::new(store, &format!("{name}.query"), g, dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), g, dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), g, dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), g, dim, dim, rng),
        }
    }
}

/// Output of [`multi_head_attention`].
#[derive(Debug, Clone)]
pub struct Attended {
    /// `[M_q, d]`.
    pub output: Var,
    /// One `[M_q, N_k]` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention with `heads` heads.
///
/// Per head `h`: `softmax(Q_h K_hᵀ / sqrt(d_h)) V_h`; head outputs are
/// concatenated and projected back to `d`. Keys whose `key_mask` entry is
/// false receive no weight (unless every key of a row is masked).
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Binding,
    params: &AttentionParams,
    queries: Var,
    keys: Var,
    values: Var,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<Attended> {
    let (_, d) = tape.shape(queries);
    let (nk, dk) = tape.shape(keys);
    let (nv, dv) = tape.shape(values);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Shape(format!("model dim {d} not divisible by {heads} heads")));
    }
    if dk != d || dv != d || nk != nv {
        return Err(Error::Shape(format!("queries [_, {d}], keys [{nk}, {dk}], values [{nv}, {dv}]")));
    }
    if let Some(mask) = key_mask {
        if mask.len() != nk {
            return Err(Error::Shape(format!("key mask of length {} for {nk} keys", mask.len())));
        }
    }
    let q = params.query.forward(tape, p, queries);
    let k = params.key.forward(tape, p, keys);
    let v = params.value.forward(tape, p, values);
    let dh = d / heads;
    let inv_sqrt = T::lit(1.0 / (dh as f64).sqrt());
    let mask_row = key_mask.map(|m| {
        let row: Vec<T> = m.iter().map(|&keep| if keep { T::zero() } else { T::lit(MASKED_LOGIT) }).collect();
        tape.constant(Matrix::row_vector(&row))
    });
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (tape.slice_cols(q, h * dh, dh), tape.slice_cols(k, h * dh, dh), tape.slice_cols(v, h * dh, dh))
        };
        let logits = tape.matmul_bt(qh, kh);
        let mut logits = tape.scale(logits, inv_sqrt);
        if let Some(m) = mask_row {
            logits = tape.add_row(logits, m);
        }
        let a = tape.softmax_rows(logits);
        weights.push(a);
        outs.push(tape.matmul(a, vh));
    }
    let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
    let output = params.output.forward(tape, p, joined);
    Ok(Attended { output, weights })
}
