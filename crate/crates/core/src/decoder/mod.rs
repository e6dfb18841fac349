//! Anchor-query transformer decoder with inter-layer query refinement.
//!
//! Layer inputs follow the dispatch rule
//!
//! ```text
//! Y_0 = { enc(ρ⁰) }
//! Y_k = { AAM(z^{k-1}) + enc(ρ^k) }   k ∈ S_r,  ρ^k = Δ(z^{k-1}) + ρ^{j}
//! Y_k = { z^{k-1} + enc(ρ^j) }        otherwise, j = latest refinement < k (or 0)
//! ```
//!
//! and one estimation head is shared by the pre-layer-0 auxiliary output,
//! every layer output and the final prediction.

pub mod attention;
pub mod export;
pub mod head;
pub mod layer;

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::backbone::{backbone_forward, pillarize, BackboneParams, GridConfig, Tokens};
use crate::encoding::{anchors_matrix, encode_anchors, AnchorEncoderParams, FourierBasis};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamStore};
use crate::sampling::{farthest_point_sample, AnchorSet};
use crate::scalar::Scalar;
use crate::scene::{Extent, GroundTruthBox, Point3, Scene};
use crate::tensor::Matrix;

pub use attention::{multi_head_attention, Attended, AttentionParams};
pub use head::{
    aam_forward, anchor_align, decode_head, estimation_head, head_forward, refine_anchors, AamParams, BoxParams,
    EstimationHeadParams, HeadOutput, BOX_DIM,
};
pub use layer::{decoder_layer_forward, DecoderLayerParams, LayerOutput};

/// Layer indices before which queries are refined (`S_r`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RefineSchedule(BTreeSet<usize>);

impl RefineSchedule {
    pub fn propagation() -> Self {
        Self(BTreeSet::new())
    }

    pub fn once() -> Self {
        Self([1].into_iter().collect())
    }

    pub fn every_second(layers: usize) -> Self {
        Self((1..layers).step_by(2).collect())
    }

    pub fn after_each(layers: usize) -> Self {
        Self((1..layers).collect())
    }

    pub fn from_layers(layers: impl IntoIterator<Item = usize>) -> Self {
        Self(layers.into_iter().collect())
    }

    /// Comma list such as `1,3,5`; the empty string is the empty set.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" || s == "-" {
            return Ok(Self::propagation());
        }
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("invalid refinement layer `{t}`"))))
            .collect::<Result<BTreeSet<_>>>()
            .map(Self)
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.0.contains(&layer)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        match self.0.iter().find(|&&k| k == 0 || k >= layers) {
            Some(k) => Err(Error::Config(format!("refinement layer {k} outside 1..{}", layers.saturating_sub(1)))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for RefineSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// `K`.
    pub layers: usize,
    /// `d`.
    pub dim: usize,
    pub heads: usize,
    /// `M`.
    pub queries: usize,
    pub ffn_dim: usize,
    /// `C`; class index `C` is 'no-object'.
    pub num_classes: usize,
    pub refine: RefineSchedule,
    /// Hide empty backbone cells from cross-attention.
    pub mask_empty: bool,
    /// Stop gradients through refined anchor locations.
    pub detach_anchors: bool,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("decoder needs at least one layer".into()));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        if !self.dim.is_multiple_of(4) {
            return Err(Error::Config(format!("dim {} must be divisible by 4", self.dim)));
        }
        if self.queries == 0 || self.num_classes == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("queries, classes and ffn width must be positive".into()));
        }
        self.refine.validate(self.layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub grid: GridConfig,
    pub decoder: DecoderConfig,
    /// Multiplier on the `2π / L` Fourier basis scale.
    pub fourier_scale: f64,
    pub fps_start: usize,
    pub pillar_seed: u64,
    /// Meters per unit of the regressed horizontal location deltas.
    pub delta_scale: f64,
    /// Initial `(w, l, h)` output of the head.
    pub size_prior: [f64; 3],
}

impl DetectorConfig {
    /// Desk-scale profile: `N = 32x32` over 50 m, `M = 25`, `d = 64`, `K = 4`,
    /// 4 heads, empty pillars masked out of cross-attention, refined anchors
    /// detached from the gradient.
    pub fn desk() -> Self {
        let mut c = Self::profile(Extent::square(50.0), 32, 64, 4, 4, 25);
        c.fourier_scale = 4.0;
        c.decoder.mask_empty = true;
        c.decoder.detach_anchors = true;
        c.delta_scale = 3.0;
        c
    }

    /// Forward-pass profile at `N = 128x128`, `M = 100`, `d = 256`, `K = 6`.
    pub fn paper_shape() -> Self {
        Self::profile(Extent::square(100.0), 128, 256, 6, 8, 100)
    }

    /// Gradient-check profile: `N = 4x4`, `M = 3`, `d = 8`, `K = 2`, 2 heads.
    pub fn micro() -> Self {
        let mut c = Self::profile(Extent::square(8.0), 4, 8, 2, 2, 3);
        c.decoder.ffn_dim = 8;
        c.delta_scale = 1.0;
        c.size_prior = [1.0, 1.5, 1.0];
        c
    }

    pub fn profile(extent: Extent, cells: usize, dim: usize, layers: usize, heads: usize, queries: usize) -> Self {
        Self {
            grid: GridConfig::with_cells(extent, cells, dim),
            decoder: DecoderConfig {
                layers,
                dim,
                heads,
                queries,
                ffn_dim: 2 * dim,
                num_classes: 1,
                refine: RefineSchedule::propagation(),
                mask_empty: false,
                detach_anchors: false,
            },
            fourier_scale: 1.0,
            fps_start: 0,
            pillar_seed: 0,
            delta_scale: 5.0,
            size_prior: [1.9, 4.6, 1.7],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.decoder.validate()?;
        if self.grid.feature_dim != self.decoder.dim {
            return Err(Error::Config(format!(
                "backbone feature dim {} differs from decoder dim {}",
                self.grid.feature_dim, self.decoder.dim
            )));
        }
        if !(self.fourier_scale.is_finite() && self.fourier_scale > 0.0) {
            return Err(Error::Config("fourier scale must be positive".into()));
        }
        if !(self.delta_scale.is_finite() && self.delta_scale > 0.0) || self.size_prior.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("delta scale must be positive and size prior finite".into()));
        }
        Ok(())
    }
}

/// Parameter handles of every module.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub basis: FourierBasis,
    pub anchor_encoder: AnchorEncoderParams,
    pub backbone: BackboneParams,
    pub layers: Vec<DecoderLayerParams>,
    pub head: EstimationHeadParams,
    pub aam: AamParams,
}

impl Layout {
    /// Creates all parameters in a fixed order, so identical configs yield
    /// identical parameter lists.
    pub fn build<T: Scalar, R: Rng>(cfg: &DetectorConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.decoder.dim;
        let side = cfg.grid.extent.width().max(cfg.grid.extent.depth());
        let basis = FourierBasis::new(store, d, cfg.fourier_scale * FourierBasis::extent_scale(side), rng)?;
        let anchor_encoder = AnchorEncoderParams::new(store, d, rng);
        let backbone = BackboneParams::new(store, d, rng);
        let layers =
            (0..cfg.decoder.layers).map(|k| DecoderLayerParams::new(store, k, d, cfg.decoder.ffn_dim, rng)).collect();
        let head = EstimationHeadParams::new(store, d, cfg.decoder.num_classes, rng);
        head.set_output_prior(store, cfg.delta_scale, cfg.size_prior);
        let aam = AamParams::new(store, d, rng);
        Ok(Self { basis, anchor_encoder, backbone, layers, head, aam })
    }
}

/// Everything the decoder computes for one scene.
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `Y_k` per layer.
    pub inputs: Vec<Var>,
    pub layers: Vec<LayerOutput>,
    /// Head outputs: index 0 on `Y_0` (pre-layer-0 auxiliary), index `k + 1`
    /// after layer `k`. The last entry is the final prediction.
    pub stages: Vec<HeadOutput>,
    /// Anchor encoding added into `Y_k`.
    pub encodings: Vec<Var>,
    /// Layer whose anchors were encoded into `Y_k` (the `j` of the dispatch,
    /// or `k` itself on refinement layers).
    pub encoding_source: Vec<usize>,
    /// Encoder parameters used for each encoding.
    pub encoder_used: Vec<AnchorEncoderParams>,
    /// Per query: initial anchor then one entry per refinement.
    pub anchor_history: Vec<Vec<Point3>>,
}

impl DecoderOutput {
    pub fn final_stage(&self) -> &HeadOutput {
        self.stages.last().expect("at least one stage")
    }
}

fn points_of<T: Scalar>(m: &Matrix<T>) -> Vec<Point3> {
    (0..m.rows()).map(|r| Point3::new(m.get(r, 0).as_f64(), m.get(r, 1).as_f64(), m.get(r, 2).as_f64())).collect()
}

pub fn decoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Binding,
    layout: &Layout,
    cfg: &DecoderConfig,
    tokens: &Tokens,
    anchors: &[Point3],
) -> Result<DecoderOutput> {
    cfg.validate()?;
    if anchors.len() != cfg.queries {
        return Err(Error::Shape(format!("{} anchors for {} queries", anchors.len(), cfg.queries)));
    }
    if layout.layers.len() != cfg.layers {
        return Err(Error::Shape(format!("{} layer parameter sets for K = {}", layout.layers.len(), cfg.layers)));
    }
    let mask = cfg.mask_empty.then_some(tokens.nonempty_mask.as_slice());

    let mut anchor = tape.constant(anchors_matrix(anchors));
    let mut encoding = encode_anchors(tape, p, &layout.basis, &layout.anchor_encoder, anchor);
    let mut source = 0;
    let mut history: Vec<Vec<Point3>> = anchors.iter().map(|&a| vec![a]).collect();

    let mut out = DecoderOutput {
        inputs: Vec::with_capacity(cfg.layers),
        layers: Vec::with_capacity(cfg.layers),
        stages: Vec::with_capacity(cfg.layers + 1),
        encodings: Vec::with_capacity(cfg.layers),
        encoding_source: Vec::with_capacity(cfg.layers),
        encoder_used: Vec::with_capacity(cfg.layers),
        anchor_history: Vec::new(),
    };
    out.stages.push(head_forward(tape, p, &layout.head, encoding, anchor));

    for k in 0..cfg.layers {
        let input = if k == 0 {
            encoding
        } else {
            let prev = out.layers[k - 1].tokens;
            if cfg.refine.contains(k) {
                let moved = out.stages[k].centers;
                anchor = if cfg.detach_anchors { tape.constant(tape.value(moved).clone()) } else { moved };
                for (h, a) in history.iter_mut().zip(points_of(tape.value(anchor))) {
                    h.push(a);
                }
                encoding = encode_anchors(tape, p, &layout.basis, &layout.anchor_encoder, anchor);
                source = k;
                let aligned = aam_forward(tape, p, &layout.aam, prev);
                tape.add(aligned, encoding)
            } else {
                tape.add(prev, encoding)
            }
        };
        out.inputs.push(input);
        out.encodings.push(encoding);
        out.encoding_source.push(source);
        out.encoder_used.push(layout.anchor_encoder);
        let lo = decoder_layer_forward(tape, p, &layout.layers[k], input, tokens.features, cfg.heads, mask)?;
        out.stages.push(head_forward(tape, p, &layout.head, lo.tokens, anchor));
        out.layers.push(lo);
    }
    out.anchor_history = history;
    Ok(out)
}

/// One emitted box.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: GroundTruthBox,
    pub score: f64,
    pub query: usize,
    pub first_anchor: Point3,
    pub last_anchor: Point3,
}

/// Full inference result for one scene.
#[derive(Debug, Clone)]
pub struct Inference<T> {
    pub detections: Vec<Detection>,
    pub anchors: AnchorSet,
    /// Final decoded head output per query.
    pub boxes: Vec<BoxParams>,
    pub anchor_history: Vec<Vec<Point3>>,
    /// Per layer, per head `[M, N]` cross-attention (when requested).
    pub cross_attention: Vec<Vec<Matrix<T>>>,
    /// Per layer, anchors the layer's head output is relative to.
    pub layer_anchors: Vec<Vec<Point3>>,
    /// Per layer decoded head output.
    pub layer_boxes: Vec<Vec<BoxParams>>,
    pub grid_dims: (usize, usize),
}

/// Keeps queries whose argmax is a real class; score is that class's
/// softmax probability.
pub fn select_detections(boxes: &[BoxParams], history: &[Vec<Point3>]) -> Vec<Detection> {
    boxes
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_no_object())
        .map(|(q, b)| {
            let last = *history[q].last().expect("anchor history");
            let probs = b.probabilities();
            Detection {
                bbox: b.to_box(last),
                score: probs[b.argmax_class()],
                query: q,
                first_anchor: history[q][0],
                last_anchor: last,
            }
        })
        .collect()
}

/// Result of a differentiable forward pass over one scene.
pub struct ForwardPass {
    pub tokens: Tokens,
    pub anchors: AnchorSet,
    pub decoder: DecoderOutput,
}

/// Detector parameters together with their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector<T> {
    pub config: DetectorConfig,
    pub params: ParamStore<T>,
    pub layout: Layout,
}

impl<T: Scalar> Detector<T> {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, &mut rng)?;
        Ok(Self { config, params, layout })
    }

    /// Rebuilds the layout for `config` over existing parameter values.
    pub fn from_params(config: DetectorConfig, params: ParamStore<T>) -> Result<Self> {
        let fresh = Self::new(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors, configuration expects {}",
                params.len(),
                fresh.params.len()
            )));
        }
        for ((_, want), (_, got)) in fresh.params.iter().zip(params.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() || want.group != got.group {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        Ok(Self { config: fresh.config, params, layout: fresh.layout })
    }

    pub fn set_refine(&mut self, schedule: RefineSchedule) -> Result<()> {
        schedule.validate(self.config.decoder.layers)?;
        self.config.decoder.refine = schedule;
        Ok(())
    }

    pub fn sample_anchors(&self, scene: &Scene) -> Result<AnchorSet> {
        farthest_point_sample(
            &scene.points,
            self.config.decoder.queries,
            self.config.fps_start.min(scene.points.len().saturating_sub(1)),
        )
    }

    /// Backbone, anchor sampling and decoder on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Binding, scene: &Scene) -> Result<ForwardPass> {
        let pillars = pillarize(scene, &self.config.grid, self.config.pillar_seed)?;
        let tokens = backbone_forward(tape, p, &self.layout.backbone, &pillars, &self.config.grid)?;
        let anchors = self.sample_anchors(scene)?;
        let decoder = decoder_forward(tape, p, &self.layout, &self.config.decoder, &tokens, &anchors.locations)?;
        Ok(ForwardPass { tokens, anchors, decoder })
    }

    pub fn infer(&self, scene: &Scene, keep_attention: bool) -> Result<Inference<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        let fwd = self.forward(&mut tape, &p, scene)?;
        let dec = &fwd.decoder;
        let boxes = decode_head(&tape, dec.final_stage());
        let detections = select_detections(&boxes, &dec.anchor_history);
        let cross_attention = if keep_attention {
            dec.layers.iter().map(|l| l.cross_weights.iter().map(|&w| tape.value(w).clone()).collect()).collect()
        } else {
            Vec::new()
        };
        let layer_anchors = dec.stages[1..].iter().map(|s| points_of(tape.value(s.anchors))).collect();
        let layer_boxes = dec.stages[1..].iter().map(|s| decode_head(&tape, s)).collect();
        Ok(Inference {
            detections,
            anchors: fwd.anchors,
            boxes,
            anchor_history: dec.anchor_history.clone(),
            cross_attention,
            layer_anchors,
            layer_boxes,
            grid_dims: (fwd.tokens.height, fwd.tokens.width),
        })
    }

    /// Boxes whose argmax class is not 'no-object'.
    pub fn detect(&self, scene: &Scene) -> Result<Vec<Detection>> {
        Ok(self.infer(scene, false)?.detections)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Group;
    use crate::scene::{generate_scene, SceneConfig};

    fn micro_scene(seed: u64) -> Scene {
        let cfg = SceneConfig {
            extent: Extent::square(8.0),
            min_objects: 1,
            max_objects: 2,
            classes: vec![crate::scene::ClassSpec { width: 1.0, length: 1.5, height: 1.0, jitter: 0.1 }],
            surface_density: 4.0,
            clutter_points: 20,
            ..Default::default()
        };
        generate_scene(&cfg, seed).unwrap()
    }

    fn micro(refine: RefineSchedule, layers: usize) -> Detector<f64> {
        let mut cfg = DetectorConfig::micro();
        cfg.decoder.layers = layers;
        cfg.decoder.refine = refine;
        Detector::new(cfg, 3).unwrap()
    }

    #[test]
    fn schedule_parsing_and_validation() {
        assert_eq!(RefineSchedule::parse("1,3,5").unwrap(), RefineSchedule::every_second(6));
        assert_eq!(RefineSchedule::parse("").unwrap(), RefineSchedule::propagation());
        assert_eq!(RefineSchedule::after_each(6).to_string(), "1,2,3,4,5");
        assert!(RefineSchedule::parse("1,x").is_err());
        assert!(RefineSchedule::from_layers([0]).validate(4).is_err());
        assert!(RefineSchedule::from_layers([4]).validate(4).is_err());
        let mut cfg = DetectorConfig::micro();
        cfg.decoder.refine = RefineSchedule::from_layers([2]);
        assert!(Detector::<f64>::new(cfg, 0).is_err());
    }

    #[test]
    fn propagation_reuses_the_initial_encoding() {
        let det = micro(RefineSchedule::propagation(), 4);
        let mut tape = Tape::new();
        let p = det.params.bind(&mut tape, |_| false);
        let fwd = det.forward(&mut tape, &p, &micro_scene(1)).unwrap();
        let dec = &fwd.decoder;
        assert!(dec.encodings.iter().all(|&e| tape.value(e) == tape.value(dec.encodings[0])));
        assert_eq!(dec.encoding_source, vec![0, 0, 0, 0]);
        assert!(dec.anchor_history.iter().all(|h| h.len() == 1));
        let a0 = tape.value(dec.stages[0].anchors).clone();
        assert!(dec.stages.iter().all(|s| tape.value(s.anchors) == &a0));
    }

    #[test]
    fn single_refinement_feeds_later_layers() {
        let det = micro(RefineSchedule::once(), 4);
        let mut tape = Tape::new();
        let p = det.params.bind(&mut tape, |_| false);
        let fwd = det.forward(&mut tape, &p, &micro_scene(2)).unwrap();
        let dec = &fwd.decoder;
        assert_eq!(dec.encoding_source, vec![0, 1, 1, 1]);
        assert_eq!(dec.encodings[2], dec.encodings[1]);
        assert_eq!(dec.encodings[3], dec.encodings[1]);
        assert_ne!(tape.value(dec.encodings[1]), tape.value(dec.encodings[0]));
        // Y_3 = z^(2) + enc(ρ^(1))
        let mut want = tape.value(dec.layers[2].tokens).clone();
        want.add_assign(tape.value(dec.encodings[1]));
        assert_eq!(tape.value(dec.inputs[3]), &want);
        assert!(dec.encoder_used.iter().all(|e| *e == det.layout.anchor_encoder));
    }

    #[test]
    fn history_length_and_telescoping() {
        let det = micro(RefineSchedule::after_each(6), 6);
        let mut tape = Tape::new();
        let p = det.params.bind(&mut tape, |_| false);
        let fwd = det.forward(&mut tape, &p, &micro_scene(3)).unwrap();
        let dec = &fwd.decoder;
        assert!(dec.anchor_history.iter().all(|h| h.len() == 6));
        let fin = dec.final_stage();
        let centers = tape.value(fin.centers);
        let deltas = tape.value(fin.deltas);
        for q in 0..3 {
            let mut c = fwd.anchors.locations[q];
            for k in 1..6 {
                let d = tape.value(dec.stages[k].deltas);
                c = c + Point3::new(d.get(q, 0), d.get(q, 1), d.get(q, 2));
            }
            c = c + Point3::new(deltas.get(q, 0), deltas.get(q, 1), deltas.get(q, 2));
            assert!((c.x - centers.get(q, 0)).abs() < 1e-6);
            assert!((c.y - centers.get(q, 1)).abs() < 1e-6);
            assert!((c.z - centers.get(q, 2)).abs() < 1e-6);
            let last = *dec.anchor_history[q].last().unwrap();
            let gap = Point3::new(centers.get(q, 0), centers.get(q, 1), centers.get(q, 2)).distance(&last);
            let d = Point3::new(deltas.get(q, 0), deltas.get(q, 1), deltas.get(q, 2)).distance(&Point3::default());
            assert!((gap - d).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_attention_is_queries_by_tokens() {
        let det = micro(RefineSchedule::once(), 2);
        let inf = det.infer(&micro_scene(4), true).unwrap();
        for layer in &inf.cross_attention {
            assert_eq!(layer.len(), 2);
            for w in layer {
                assert_eq!(w.shape(), (3, 16));
                for r in 0..3 {
                    assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn no_object_logits_yield_no_detections() {
        let mut det = micro(RefineSchedule::propagation(), 2);
        let cls = det.layout.head.classifier;
        det.params.value_mut(cls.weight).scale_in_place(0.0);
        let bias = det.params.value_mut(cls.bias);
        bias.set(0, 0, -5.0);
        bias.set(0, 1, 5.0);
        assert!(det.detect(&micro_scene(5)).unwrap().is_empty());
    }

    #[test]
    fn detection_filter_and_slot_bound() {
        let boxes: Vec<BoxParams> = (0..6)
            .map(|q| BoxParams::from_rows(&[0.0f64; 10], &if q % 2 == 0 { [2.0, 0.0] } else { [0.0, 1.0] }))
            .collect();
        let history = vec![vec![Point3::default()]; 6];
        let dets = select_detections(&boxes, &history);
        assert_eq!(dets.len(), 3);
        assert!(dets.len() <= boxes.len());
        let p = 1.0 / (1.0 + (-2.0f64).exp());
        assert!(dets.iter().all(|d| (d.score - p).abs() < 1e-12));
    }

    #[test]
    fn from_params_rejects_mismatched_shapes() {
        let det = micro(RefineSchedule::propagation(), 2);
        let mut other = DetectorConfig::micro();
        other.decoder.dim = 12;
        other.grid.feature_dim = 12;
        other.decoder.heads = 3;
        assert!(Detector::from_params(other, det.params.clone()).is_err());
        assert!(Detector::from_params(det.config.clone(), det.params.clone()).is_ok());
        assert_eq!(det.params.ids_in(Group::Fixed).len(), 2);
    }
}
