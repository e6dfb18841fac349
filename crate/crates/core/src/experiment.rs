//! Refinement-schedule ablation: one propagation model per seed, fine-tuned
//! under each schedule variant and evaluated on a held-out split.

use crate::decoder::{Detector, DetectorConfig, RefineSchedule};
use crate::error::{Error, Result};
use crate::eval::{run_detector, EvalRun, MetricsReport};
use crate::scalar::Scalar;
use crate::scene::Scene;
use crate::training::{train_aam, train_propagation, train_refinement, EpochRecord, TrainConfig, TrainLog};

/// Row names and schedules for a `layers`-deep decoder, in table order.
pub fn schedule_variants(layers: usize) -> Vec<(&'static str, RefineSchedule)> {
    vec![
        ("Propagation", RefineSchedule::propagation()),
        ("Once", RefineSchedule::once()),
        ("Every 2nd", RefineSchedule::every_second(layers)),
        ("After each", RefineSchedule::after_each(layers)),
    ]
}

#[derive(Debug, Clone)]
pub struct VariantRun<T: Scalar> {
    pub name: &'static str,
    pub detector: Detector<T>,
    pub log: TrainLog,
    pub eval: EvalRun,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct SeedRun<T: Scalar> {
    pub seed: u64,
    /// The shared propagation model every variant starts from.
    pub stage1: Detector<T>,
    pub stage1_log: TrainLog,
    pub variants: Vec<VariantRun<T>>,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: &'static str,
    pub schedule: RefineSchedule,
    /// Mean over seeds.
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct Ablation<T: Scalar> {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<SeedRun<T>>,
}

impl<T: Scalar> Ablation<T> {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Trains and evaluates each of `variants` for each seed.
///
/// The propagation row keeps training with `S_r = ∅` for the stage-2 epoch
/// budget so that all rows see the same number of detector updates.
pub fn ablate_schedules<T: Scalar>(
    config: &DetectorConfig,
    train: &TrainConfig,
    train_scenes: &[Scene],
    eval_scenes: &[Scene],
    seeds: &[u64],
    variants: &[(&'static str, RefineSchedule)],
    on_epoch: &mut dyn FnMut(u64, &str, &EpochRecord),
) -> Result<Ablation<T>> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one schedule".into()));
    }
    for (_, schedule) in variants {
        schedule.validate(config.decoder.layers)?;
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..train.clone() };
        let mut base = Detector::new(DetectorConfig { decoder: config.decoder.clone(), ..config.clone() }, seed)?;
        base.set_refine(RefineSchedule::propagation())?;
        let mut stage1_log = TrainLog::default();
        train_propagation(&mut base, train_scenes, &cfg, &mut stage1_log, &mut |r| on_epoch(seed, "stage1", r))?;
        let mut out = Vec::with_capacity(variants.len());
        for (name, schedule) in variants {
            let mut det = base.clone();
            let mut log = TrainLog::default();
            let mut report = |r: &EpochRecord| on_epoch(seed, name, r);
            if schedule.is_empty() {
                let more = TrainConfig { stage1_epochs: cfg.stage2_epochs, ..cfg.clone() };
                train_propagation(&mut det, train_scenes, &more, &mut log, &mut report)?;
            } else {
                det.set_refine(schedule.clone())?;
                train_aam(&mut det, train_scenes, &cfg, &mut log, &mut report)?;
                train_refinement(&mut det, train_scenes, &cfg, &mut log, &mut report)?;
            }
            let eval = run_detector(&det, eval_scenes)?;
            let metrics = eval.metrics();
            out.push(VariantRun { name, detector: det, log, eval, metrics });
        }
        runs.push(SeedRun { seed, stage1: base, stage1_log, variants: out });
    }
    let rows = variants
        .iter()
        .enumerate()
        .map(|(i, (name, schedule))| {
            let per_seed: Vec<MetricsReport> = runs.iter().map(|r| r.variants[i].metrics.clone()).collect();
            AblationRow { name, schedule: schedule.clone(), metrics: MetricsReport::mean(&per_seed).expect("seeds") }
        })
        .collect();
    Ok(Ablation { rows, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, Extent, SceneConfig};

    #[test]
    fn four_rows_in_table_order() {
        let names: Vec<_> = schedule_variants(6).into_iter().map(|(n, s)| (n, s.to_string())).collect();
        assert_eq!(
            names,
            vec![
                ("Propagation", "".into()),
                ("Once", "1".into()),
                ("Every 2nd", "1,3,5".into()),
                ("After each", "1,2,3,4,5".into())
            ]
        );
    }

    #[test]
    fn tiny_ablation_runs_every_variant() {
        let sc = SceneConfig { extent: Extent::square(8.0), max_objects: 1, clutter_points: 40, ..Default::default() };
        let scenes: Vec<Scene> = (0..3).map(|i| generate_scene(&sc, i).unwrap()).collect();
        let mut cfg = DetectorConfig::micro();
        cfg.decoder.layers = 3;
        let train = TrainConfig { stage1_epochs: 1, aam_epochs: 1, stage2_epochs: 1, ..Default::default() };
        let mut epochs = 0;
        let variants = schedule_variants(3);
        let a =
            ablate_schedules::<f64>(&cfg, &train, &scenes, &scenes[..1], &[1], &variants, &mut |_, _, _| epochs += 1)
                .unwrap();
        assert_eq!(a.rows.len(), 4);
        assert_eq!(a.runs[0].variants.len(), 4);
        assert_eq!(a.runs[0].variants[3].detector.config.decoder.refine, RefineSchedule::after_each(3));
        assert_eq!(epochs, 1 + 1 + 3 * 2);
    }
}
