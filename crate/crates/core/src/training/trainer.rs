//! Staged training: propagation pre-training, separate AAM fitting, and
//! refinement fine-tuning with the AAM frozen.

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::decoder::head::{aam_forward, head_forward, SHAPE_DIM};
use crate::decoder::{Detector, RefineSchedule};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::Group;
use crate::scalar::Scalar;
use crate::scene::Scene;
use crate::tensor::Matrix;

use super::loss::{set_loss, LossBreakdown, LossConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub aam_epochs: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative decay applied every `decay_period` epochs of a stage.
    pub lr_decay: f64,
    pub decay_period: usize,
    pub aam_learning_rate: f64,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    /// Tokens per AAM optimizer step.
    pub aam_batch_size: usize,
    pub clip_norm: f64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 80,
            aam_epochs: 20,
            stage2_epochs: 80,
            learning_rate: 1e-4,
            lr_decay: 0.1,
            decay_period: 53,
            aam_learning_rate: 1e-3,
            batch_size: 1,
            aam_batch_size: 128,
            clip_norm: 1.0,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.learning_rate, self.aam_learning_rate, self.lr_decay];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("learning rates and decay must be finite and nonnegative".into()));
        }
        if self.decay_period == 0 || self.batch_size == 0 || self.aam_batch_size == 0 {
            return Err(Error::Config("decay period and batch sizes must be positive".into()));
        }
        let l = &self.loss;
        if [l.regression, l.classification, l.no_object_weight].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        base * self.lr_decay.powi((epoch / self.decay_period) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Propagation,
    Aam,
    Refinement,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Propagation => "stage1",
            Stage::Aam => "aam",
            Stage::Refinement => "stage2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_reg: f64,
    pub loss_cls: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,loss_total,loss_reg,loss_cls,stage\n");
        for r in &self.records {
            s += &format!(
                "{},{:e},{:.6},{:.6},{:.6},{}\n",
                r.epoch, r.lr, r.loss_total, r.loss_reg, r.loss_cls, r.stage
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }
}

fn detector_groups(g: Group) -> bool {
    !matches!(g, Group::Aam | Group::Fixed)
}

/// Loss and parameter gradients of one scene.
pub fn scene_gradients<T: Scalar>(
    det: &Detector<T>,
    scene: &Scene,
    loss: &LossConfig,
    active: impl Fn(Group) -> bool,
) -> Result<(Vec<Matrix<T>>, LossBreakdown)> {
    let mut tape = Tape::new();
    let p = det.params.bind(&mut tape, active);
    let fwd = det.forward(&mut tape, &p, scene)?;
    let l = set_loss(&mut tape, &fwd.decoder.stages, &scene.boxes, loss)?;
    let mut g = tape.backward(l.total);
    Ok((det.params.collect_grads(&p, &mut g), l.breakdown))
}

/// Mean loss over `scenes` without updating anything.
pub fn evaluate_loss<T: Scalar>(det: &Detector<T>, scenes: &[Scene], loss: &LossConfig) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for scene in scenes {
        let mut tape = Tape::new();
        let p = det.params.bind(&mut tape, |_| false);
        let fwd = det.forward(&mut tape, &p, scene)?;
        let b = set_loss(&mut tape, &fwd.decoder.stages, &scene.boxes, loss)?.breakdown;
        if acc.stages.is_empty() {
            acc.stages = vec![Default::default(); b.stages.len()];
        }
        for (a, s) in acc.stages.iter_mut().zip(&b.stages) {
            a.regression += s.regression / scenes.len() as f64;
            a.classification += s.classification / scenes.len() as f64;
        }
        acc.total += b.total / scenes.len() as f64;
    }
    Ok(acc)
}

/// Trains decoder, backbone, encoder and head for `epochs` epochs with the
/// detector's current refinement schedule; AAM and fixed parameters are not
/// touched.
fn run_detector_stage<T: Scalar>(
    det: &mut Detector<T>,
    scenes: &[Scene],
    cfg: &TrainConfig,
    stage: Stage,
    epochs: usize,
    log: &mut TrainLog,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<()> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("training scenes"));
    }
    if let Some(s) = scenes.iter().find(|s| s.boxes.len() > det.config.decoder.queries) {
        return Err(Error::Config(format!(
            "{} ground-truth boxes exceed {} queries",
            s.boxes.len(),
            det.config.decoder.queries
        )));
    }
    let stage_salt = match stage {
        Stage::Propagation => 1,
        Stage::Aam => 2,
        Stage::Refinement => 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stage_salt);
    let mut adam = Adam::new(&det.params, AdamConfig { clip_norm: cfg.clip_norm, ..Default::default() });
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    for epoch in 0..epochs {
        let lr = cfg.lr_at(cfg.learning_rate, epoch);
        order.shuffle(&mut rng);
        let (mut total, mut reg, mut cls) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Matrix<T>>> = None;
            for &i in batch {
                let (grads, b) = scene_gradients(det, &scenes[i], &cfg.loss, detector_groups)?;
                if !b.total.is_finite() {
                    return Err(Error::Divergence { epoch, detail: format!("{stage} loss {} on scene {i}", b.total) });
                }
                total += b.total;
                reg += b.regression();
                cls += b.classification();
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
            }
            let mut grads = acc.expect("nonempty batch");
            if batch.len() > 1 {
                let s = T::lit(1.0 / batch.len() as f64);
                grads.iter_mut().for_each(|g| g.scale_in_place(s));
            }
            if let Some(bad) = det.params.iter().zip(&grads).find(|(_, g)| !g.all_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite gradient for `{}`", bad.0 .1.name),
                });
            }
            adam.step(&mut det.params, &grads, lr, detector_groups);
        }
        let n = scenes.len() as f64;
        let rec = EpochRecord { epoch, lr, loss_total: total / n, loss_reg: reg / n, loss_cls: cls / n, stage };
        on_epoch(&rec);
        log.records.push(rec);
    }
    Ok(())
}

/// Stage 1: trains with `S_r = ∅` regardless of the configured schedule.
pub fn train_propagation<T: Scalar>(
    det: &mut Detector<T>,
    scenes: &[Scene],
    cfg: &TrainConfig,
    log: &mut TrainLog,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<()> {
    let schedule = std::mem::take(&mut det.config.decoder.refine);
    let result = run_detector_stage(det, scenes, cfg, Stage::Propagation, cfg.stage1_epochs, log, on_epoch);
    det.config.decoder.refine = schedule;
    result
}

/// Stage 2: continues training with the configured schedule; the AAM stays
/// bit-identical.
pub fn train_refinement<T: Scalar>(
    det: &mut Detector<T>,
    scenes: &[Scene],
    cfg: &TrainConfig,
    log: &mut TrainLog,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<()> {
    let aam_before = det.params.fingerprint(Some(Group::Aam));
    run_detector_stage(det, scenes, cfg, Stage::Refinement, cfg.stage2_epochs, log, on_epoch)?;
    if det.params.fingerprint(Some(Group::Aam)) != aam_before {
        return Err(Error::Config("AAM parameters changed during refinement training".into()));
    }
    Ok(())
}

/// Layer outputs `z^{(k)}` whose successors may be refined: `k + 1 ∈ S_r`,
/// or every layer but the last when the schedule is empty.
pub fn aam_source_layers(layers: usize, schedule: &RefineSchedule) -> Vec<usize> {
    if schedule.is_empty() {
        (0..layers.saturating_sub(1)).collect()
    } else {
        schedule.layers().map(|k| k - 1).collect()
    }
}

/// Decoder output tokens of `layers` from propagation forward passes.
pub fn collect_aam_tokens<T: Scalar>(det: &Detector<T>, scenes: &[Scene], layers: &[usize]) -> Result<Matrix<T>> {
    let mut propagation = det.clone();
    propagation.config.decoder.refine = RefineSchedule::propagation();
    let d = det.config.decoder.dim;
    let mut data = Vec::new();
    for scene in scenes {
        let mut tape = Tape::new();
        let p = propagation.params.bind(&mut tape, |_| false);
        let fwd = propagation.forward(&mut tape, &p, scene)?;
        for &k in layers {
            data.extend_from_slice(tape.value(fwd.decoder.layers[k].tokens).as_slice());
        }
    }
    Matrix::from_vec(data.len() / d, d, data)
}

/// Head-space comparison of `head(AAM(z))` with `head(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AamStats {
    /// Mean `‖Δ‖₁` of `head(z)`.
    pub raw_delta: f64,
    /// Mean `‖Δ‖₁` of `head(AAM(z))`.
    pub aligned_delta: f64,
    /// Mean ℓ1 drift of non-location outputs (sizes, yaw pair, velocity,
    /// class logits).
    pub drift: f64,
    /// Mean ℓ1 magnitude of the same outputs of `head(z)`.
    pub magnitude: f64,
    /// `aligned_delta + drift`, the AAM training objective.
    pub objective: f64,
}

struct HeadTargets<T> {
    deltas: Matrix<T>,
    shape: Matrix<T>,
    logits: Matrix<T>,
}

fn head_targets<T: Scalar>(det: &Detector<T>, tokens: &Matrix<T>) -> HeadTargets<T> {
    let mut tape = Tape::new();
    let p = det.params.bind(&mut tape, |_| false);
    let z = tape.constant(tokens.clone());
    let a = tape.constant(Matrix::zeros(tokens.rows(), 3));
    let out = head_forward(&mut tape, &p, &det.layout.head, z, a);
    HeadTargets {
        deltas: tape.value(out.deltas).clone(),
        shape: tape.value(out.shape).clone(),
        logits: tape.value(out.logits).clone(),
    }
}

fn l1_mean<T: Scalar>(a: &Matrix<T>, b: Option<&Matrix<T>>, rows: usize) -> f64 {
    let s: f64 = match b {
        Some(b) => a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum(),
        None => a.as_slice().iter().map(|x| x.as_f64().abs()).sum(),
    };
    s / rows.max(1) as f64
}

pub fn aam_stats<T: Scalar>(det: &Detector<T>, tokens: &Matrix<T>) -> AamStats {
    let raw = head_targets(det, tokens);
    let mut tape = Tape::new();
    let p = det.params.bind(&mut tape, |_| false);
    let z = tape.constant(tokens.clone());
    let aligned = aam_forward(&mut tape, &p, &det.layout.aam, z);
    let a = tape.constant(Matrix::zeros(tokens.rows(), 3));
    let out = head_forward(&mut tape, &p, &det.layout.head, aligned, a);
    let n = tokens.rows();
    let aligned_delta = l1_mean(tape.value(out.deltas), None, n);
    let drift =
        l1_mean(tape.value(out.shape), Some(&raw.shape), n) + l1_mean(tape.value(out.logits), Some(&raw.logits), n);
    AamStats {
        raw_delta: l1_mean(&raw.deltas, None, n),
        aligned_delta,
        drift,
        magnitude: l1_mean(&raw.shape, None, n) + l1_mean(&raw.logits, None, n),
        objective: aligned_delta + drift,
    }
}

/// Fits only the AAM so that the shared head reads zero location deltas from
/// `AAM(z)` while every other head output matches `head(z)`. Returns the
/// objective before and after training on `tokens`.
pub fn train_aam_on_tokens<T: Scalar>(
    det: &mut Detector<T>,
    tokens: &Matrix<T>,
    cfg: &TrainConfig,
    log: &mut TrainLog,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(AamStats, AamStats)> {
    cfg.validate()?;
    if tokens.rows() == 0 {
        return Err(Error::Empty("AAM training tokens"));
    }
    let before = aam_stats(det, tokens);
    let targets = head_targets(det, tokens);
    let frozen = det.params.fingerprint_where(|g| g != Group::Aam);
    let is_aam = |g: Group| g == Group::Aam;
    let mut adam = Adam::new(&det.params, AdamConfig { clip_norm: cfg.clip_norm, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 2);
    let mut order: Vec<usize> = (0..tokens.rows()).collect();
    let d = tokens.cols();
    for epoch in 0..cfg.aam_epochs {
        let lr = cfg.lr_at(cfg.aam_learning_rate, epoch);
        order.shuffle(&mut rng);
        let (mut total, mut reg, mut drift) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.aam_batch_size) {
            let b = batch.len();
            let pick = |m: &Matrix<T>, cols: usize| Matrix::from_fn(b, cols, |r, c| m.get(batch[r], c));
            let mut tape = Tape::new();
            let p = det.params.bind(&mut tape, is_aam);
            let z = tape.constant(pick(tokens, d));
            let aligned = aam_forward(&mut tape, &p, &det.layout.aam, z);
            let a = tape.constant(Matrix::zeros(b, 3));
            let out = head_forward(&mut tape, &p, &det.layout.head, aligned, a);
            let scale = T::lit(1.0 / b as f64);
            let t_delta = tape.l1(out.deltas, Matrix::zeros(b, 3), scale);
            let t_shape = tape.l1(out.shape, pick(&targets.shape, SHAPE_DIM), scale);
            let t_logit = tape.l1(out.logits, pick(&targets.logits, targets.logits.cols()), scale);
            let loss = tape.sum_scalars(&[t_delta, t_shape, t_logit]);
            let value = tape.scalar(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, detail: format!("AAM objective {value}") });
            }
            let w = b as f64 / tokens.rows() as f64;
            total += value * w;
            reg += tape.scalar(t_delta).as_f64() * w;
            drift += (tape.scalar(t_shape).as_f64() + tape.scalar(t_logit).as_f64()) * w;
            let mut g = tape.backward(loss);
            let grads = det.params.collect_grads(&p, &mut g);
            adam.step(&mut det.params, &grads, lr, is_aam);
        }
        let rec = EpochRecord { epoch, lr, loss_total: total, loss_reg: reg, loss_cls: drift, stage: Stage::Aam };
        on_epoch(&rec);
        log.records.push(rec);
    }
    debug_assert_eq!(frozen, det.params.fingerprint_where(|g| g != Group::Aam));
    Ok((before, aam_stats(det, tokens)))
}

/// Collects tokens from `scenes` with the propagation model and fits the AAM.
pub fn train_aam<T: Scalar>(
    det: &mut Detector<T>,
    scenes: &[Scene],
    cfg: &TrainConfig,
    log: &mut TrainLog,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(AamStats, AamStats)> {
    let layers = aam_source_layers(det.config.decoder.layers, &det.config.decoder.refine);
    let tokens = collect_aam_tokens(det, scenes, &layers)?;
    train_aam_on_tokens(det, &tokens, cfg, log, on_epoch)
}

/// Full staged pipeline: propagation pre-training, then (when the detector
/// has a non-empty schedule) AAM fitting and refinement fine-tuning.
pub fn train_detector<T: Scalar>(
    det: &mut Detector<T>,
    scenes: &[Scene],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    train_propagation(det, scenes, cfg, &mut log, on_epoch)?;
    if !det.config.decoder.refine.is_empty() && cfg.stage2_epochs > 0 {
        train_aam(det, scenes, cfg, &mut log, on_epoch)?;
        train_refinement(det, scenes, cfg, &mut log, on_epoch)?;
    }
    Ok(log)
}
