use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::decoder::attention::{multi_head_attention, AttentionParams};
use crate::error::Result;
use crate::params::{Binding, Group, Linear, Norm, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayerParams {
    pub self_norm: Norm,
    pub self_attention: AttentionParams,
    pub cross_norm: Norm,
    pub cross_attention: AttentionParams,
    pub ffn_norm: Norm,
    pub ffn_hidden: Linear,
    pub ffn_output: Linear,
}

impl DecoderLayerParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        index: usize,
        dim: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Self {
        let name = |s: &str| format!("decoder.layer{index}.{s}");
        let g = Group::Decoder;
        Self {
            self_norm: Norm::new(store, &name("self_norm"), g, dim),
            self_attention: AttentionParams::new(store, &name("self_attention"), dim, rng),
            cross_norm: Norm::new(store, &name("cross_norm"), g, dim),
            cross_attention: AttentionParams::new(store, &name("cross_attention"), dim, rng),
            ffn_norm: Norm::new(store, &name("ffn_norm"), g, dim),
            ffn_hidden: Linear::new(store, &name("ffn_hidden"), g, dim, ffn_dim, rng),
            ffn_output: Linear::new(store, &name("ffn_output"), g, ffn_dim, dim, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerOutput {
    /// `[M, d]` output tokens `z^{(k)}`.
    pub tokens: Var,
    pub self_weights: Vec<Var>,
    /// Per head `[M, N]`.
    pub cross_weights: Vec<Var>,
}

/// Pre-norm decoder block: self-attention over the queries, cross-attention
/// into the backbone tokens, position-wise FFN; each sublayer is residual.
pub fn decoder_layer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Binding,
    params: &DecoderLayerParams,
    input: Var,
    memory: Var,
    heads: usize,
    memory_mask: Option<&[bool]>,
) -> Result<LayerOutput> {
    let x = input;
    let n = params.self_norm.forward(tape, p, x);
    let sa = multi_head_attention(tape, p, &params.self_attention, n, n, n, heads, None)?;
    let x = tape.add(x, sa.output);

    let n = params.cross_norm.forward(tape, p, x);
    let ca = multi_head_attention(tape, p, &params.cross_attention, n, memory, memory, heads, memory_mask)?;
    let x = tape.add(x, ca.output);

    let n = params.ffn_norm.forward(tape, p, x);
    let h = params.ffn_hidden.forward(tape, p, n);
    let h = tape.relu(h);
    let f = params.ffn_output.forward(tape, p, h);
    let tokens = tape.add(x, f);
    Ok(LayerOutput { tokens, self_weights: sa.weights, cross_weights: ca.weights })
}
