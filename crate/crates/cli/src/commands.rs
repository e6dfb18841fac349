use std::fs;
use std::path::{Path, PathBuf};

use anchordet::eval::report::{histogram_svg, metrics_csv, pr_svg, travel_csv, travel_svg};
use anchordet::eval::{run_detector, travel_length_stats, TravelKind};
use anchordet::experiment::{ablate_schedules, schedule_variants};
use anchordet::training::{
    load_checkpoint, save_checkpoint, train_aam, train_propagation, train_refinement, EpochRecord, TrainLog,
};
use anchordet::{decoder::export::write_attention_maps, generate_scene, load_scene, save_scene};
use anchordet::{Detector32, Error, RefineSchedule, Result, Scene};

use crate::run_config::RunConfig;

/// Output directory with the `config.echo`, `checkpoints/`, `logs/` and
/// `reports/` layout.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, config: &RunConfig) -> Result<Self> {
        for sub in ["checkpoints", "logs", "reports"] {
            fs::create_dir_all(root.join(sub))?;
        }
        fs::write(root.join("config.echo"), config.echo())?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(name)
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

fn progress(r: &EpochRecord) {
    eprintln!(
        "[{}] epoch {:>3}  lr {:.2e}  loss {:.4}  reg {:.4}  cls {:.4}",
        r.stage, r.epoch, r.lr, r.loss_total, r.loss_reg, r.loss_cls
    );
}

pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:05}.scene")
}

/// All `*.scene` files of `dir` in name order.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<Scene>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read data directory `{}`: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scene"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no .scene files in `{}`", dir.display())));
    }
    paths.iter().map(load_scene).collect()
}

fn generate_split(config: &RunConfig, offset: u64, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64).map(|i| generate_scene(&config.scene, config.scene.seed + offset + i)).collect()
}

fn training_scenes(config: &RunConfig, data: Option<&Path>) -> Result<Vec<Scene>> {
    match data {
        Some(dir) => load_scene_dir(dir),
        None => generate_split(config, 0, config.options.train_count),
    }
}

fn evaluation_scenes(config: &RunConfig, data: Option<&Path>) -> Result<Vec<Scene>> {
    match data {
        Some(dir) => load_scene_dir(dir),
        None => generate_split(config, config.options.eval_seed_offset, config.options.eval_count),
    }
}

fn checked_scenes(scenes: Vec<Scene>, det: &Detector32) -> Result<Vec<Scene>> {
    for s in &scenes {
        s.validate(Some(det.config.decoder.num_classes))?;
    }
    Ok(scenes)
}

fn load_model(config: &RunConfig, path: &Path) -> Result<Detector32> {
    if !path.is_file() {
        return Err(Error::Config(format!("checkpoint `{}` not found", path.display())));
    }
    let mut det: Detector32 = load_checkpoint(path)?;
    config.check_checkpoint(&det.config)?;
    if config.is_explicit("model.refine") {
        det.set_refine(config.detector.decoder.refine.clone())?;
    }
    Ok(det)
}

pub fn gen_data(config: &RunConfig, count: usize, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.echo"), config.echo())?;
    for (i, scene) in generate_split(config, 0, count)?.iter().enumerate() {
        save_scene(scene, out.join(scene_file_name(i)))?;
    }
    eprintln!("wrote {count} scenes to {}", out.display());
    Ok(())
}

/// Stage 1 from scratch (or resumed from `checkpoint`), or stage 2 when a
/// refinement schedule is given together with an AAM checkpoint.
pub fn train(config: &RunConfig, data: Option<&Path>, checkpoint: Option<&Path>, out: &Path) -> Result<()> {
    let run = RunDir::create(out, config)?;
    let refine = !config.detector.decoder.refine.is_empty();
    let mut det = match checkpoint {
        Some(path) => load_model(config, path)?,
        None if refine => {
            return Err(Error::Config(
                "stage-2 training needs --checkpoint pointing at a trained AAM checkpoint".into(),
            ))
        }
        None => Detector32::new(config.detector.clone(), config.train.seed)?,
    };
    let scenes = checked_scenes(training_scenes(config, data)?, &det)?;
    let mut log = TrainLog::default();
    let name = if refine {
        train_refinement(&mut det, &scenes, &config.train, &mut log, &mut progress)?;
        "stage2"
    } else {
        train_propagation(&mut det, &scenes, &config.train, &mut log, &mut progress)?;
        "stage1"
    };
    log.write_csv(run.log(&format!("{name}.csv")))?;
    save_checkpoint(&det, run.checkpoint(&format!("{name}.ckpt")))?;
    Ok(())
}

pub fn train_aam_cmd(config: &RunConfig, checkpoint: &Path, data: Option<&Path>, out: &Path) -> Result<()> {
    let run = RunDir::create(out, config)?;
    let mut det = load_model(config, checkpoint)?;
    if det.config.decoder.refine.is_empty() {
        det.set_refine(RefineSchedule::after_each(det.config.decoder.layers))?;
    }
    let scenes = checked_scenes(training_scenes(config, data)?, &det)?;
    let mut log = TrainLog::default();
    let (before, after) = train_aam(&mut det, &scenes, &config.train, &mut log, &mut progress)?;
    let mut stats = String::from("when,raw_delta,aligned_delta,drift,objective\n");
    for (when, s) in [("before", before), ("after", after)] {
        stats += &format!("{when},{:.6},{:.6},{:.6},{:.6}\n", s.raw_delta, s.aligned_delta, s.drift, s.objective);
    }
    fs::write(run.report("aam_stats.csv"), stats)?;
    log.write_csv(run.log("aam.csv"))?;
    save_checkpoint(&det, run.checkpoint("aam.ckpt"))?;
    Ok(())
}

pub fn eval(config: &RunConfig, checkpoint: &Path, data: Option<&Path>, out: &Path) -> Result<()> {
    let run = RunDir::create(out, config)?;
    let det = load_model(config, checkpoint)?;
    let scenes = checked_scenes(evaluation_scenes(config, data)?, &det)?;
    let result = run_detector(&det, &scenes)?;
    let plain = result.metrics();
    fs::write(run.report("pr.svg"), pr_svg(&plain))?;
    let csv = match config.options.nms {
        Some(t) => {
            let suppressed = result.with_nms(t).metrics();
            let label = format!("with NMS {t}");
            metrics_csv([("without NMS", &plain), (label.as_str(), &suppressed)])
        }
        None => metrics_csv([("detector", &plain)]),
    };
    fs::write(run.report("metrics.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn ablate(config: &RunConfig, data: Option<&Path>, eval_data: Option<&Path>, out: &Path) -> Result<()> {
    let run = RunDir::create(out, config)?;
    let probe = Detector32::new(config.detector.clone(), config.train.seed)?;
    let train_scenes = checked_scenes(training_scenes(config, data)?, &probe)?;
    let eval_scenes = checked_scenes(evaluation_scenes(config, eval_data)?, &probe)?;
    let seeds: Vec<u64> = (0..config.options.ablate_seeds as u64).map(|i| config.train.seed + i).collect();
    let mut on_epoch = |seed: u64, variant: &str, r: &EpochRecord| {
        eprint!("seed {seed} {variant:<12} ");
        progress(r);
    };
    let variants = schedule_variants(config.detector.decoder.layers);
    let ablation = ablate_schedules::<f32>(
        &config.detector,
        &config.train,
        &train_scenes,
        &eval_scenes,
        &seeds,
        &variants,
        &mut on_epoch,
    )?;
    let csv = metrics_csv(ablation.rows.iter().map(|r| (r.name, &r.metrics)));
    fs::write(run.report("ablation.csv"), &csv)?;
    let mut per_seed = String::from("seed,method,AP,ATE,ASE,AOE\n");
    for seed_run in &ablation.runs {
        seed_run.stage1_log.write_csv(run.log(&format!("seed{}_stage1.csv", seed_run.seed)))?;
        for v in &seed_run.variants {
            let m = &v.metrics;
            per_seed += &format!("{},{},{:.4},{:.4},{:.4},{:.4}\n", seed_run.seed, v.name, m.ap, m.ate, m.ase, m.aoe);
            let slug = v.name.to_lowercase().replace(' ', "_");
            v.log.write_csv(run.log(&format!("seed{}_{slug}.csv", seed_run.seed)))?;
            save_checkpoint(&v.detector, run.checkpoint(&format!("seed{}_{slug}.ckpt", seed_run.seed)))?;
        }
    }
    fs::write(run.report("ablation_per_seed.csv"), per_seed)?;
    print!("{csv}");
    Ok(())
}

pub fn analyze_travel(config: &RunConfig, checkpoint: &Path, data: Option<&Path>, out: &Path) -> Result<()> {
    let run = RunDir::create(out, config)?;
    let det = load_model(config, checkpoint)?;
    let scenes = checked_scenes(evaluation_scenes(config, data)?, &det)?;
    let records = run_detector(&det, &scenes)?.travel_records();
    let width = config.options.travel_bin;
    let fq = travel_length_stats(&records, width, TravelKind::First);
    let lq = travel_length_stats(&records, width, TravelKind::Latest);
    fs::write(run.report("travel_fq.csv"), travel_csv(&fq))?;
    fs::write(run.report("travel_lq.csv"), travel_csv(&lq))?;
    fs::write(run.report("travel.svg"), travel_svg(&[("FQ", &fq, "#1f77b4"), ("LQ", &lq, "#d62728")]))?;
    fs::write(run.report("travel_hist.svg"), histogram_svg(&lq))?;
    eprintln!("{} detections, {} true positives", records.len(), records.iter().filter(|r| r.error.is_some()).count());
    Ok(())
}

pub fn dump_attention(config: &RunConfig, checkpoint: &Path, scene: &Path, query: usize, out: &Path) -> Result<()> {
    let run = RunDir::create(out, config)?;
    let det = load_model(config, checkpoint)?;
    if query >= det.config.decoder.queries {
        return Err(Error::Config(format!("query {query} out of range (M = {})", det.config.decoder.queries)));
    }
    let scene = load_scene(scene)?;
    scene.validate(Some(det.config.decoder.num_classes))?;
    let inference = det.infer(&scene, true)?;
    let paths = write_attention_maps(&inference, query, run.report("attention"))?;
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}
