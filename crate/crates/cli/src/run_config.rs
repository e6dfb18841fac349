use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anchordet::config::{parse_settings, parse_value, render_settings, Settings};
use anchordet::training::TrainConfig;
use anchordet::{DetectorConfig, Error, Extent, Result, SceneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Desk,
    PaperShape,
}

impl Profile {
    fn detector(self) -> DetectorConfig {
        match self {
            Profile::Desk => DetectorConfig::desk(),
            Profile::PaperShape => DetectorConfig::paper_shape(),
        }
    }
}

/// Evaluation, data-split and ablation options.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub train_count: usize,
    pub eval_count: usize,
    /// Seed offset between the training and evaluation splits.
    pub eval_seed_offset: u64,
    pub nms: Option<f64>,
    pub travel_bin: f64,
    pub ablate_seeds: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            train_count: 200,
            eval_count: 50,
            eval_seed_offset: 1_000_000,
            nms: None,
            travel_bin: 4.0,
            ablate_seeds: 3,
        }
    }
}

impl Settings for RunOptions {
    fn entries(&self) -> Vec<(String, String)> {
        vec![
            ("data.train_count".into(), self.train_count.to_string()),
            ("data.eval_count".into(), self.eval_count.to_string()),
            ("data.eval_seed_offset".into(), self.eval_seed_offset.to_string()),
            ("eval.nms".into(), self.nms.map_or_else(|| "none".into(), |v| v.to_string())),
            ("eval.travel_bin".into(), self.travel_bin.to_string()),
            ("ablate.seeds".into(), self.ablate_seeds.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "data.train_count" => self.train_count = parse_value(key, value)?,
            "data.eval_count" => self.eval_count = parse_value(key, value)?,
            "data.eval_seed_offset" => self.eval_seed_offset = parse_value(key, value)?,
            "eval.nms" => {
                self.nms = match value.trim() {
                    "none" | "off" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "eval.travel_bin" => self.travel_bin = parse_value(key, value)?,
            "ablate.seeds" => self.ablate_seeds = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Grid and model keys that fix parameter shapes.
const STRUCTURAL_KEYS: [&str; 8] = [
    "grid.cell_size",
    "grid.cells",
    "model.dim",
    "model.layers",
    "model.heads",
    "model.queries",
    "model.ffn_dim",
    "model.num_classes",
];

/// Fully merged run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub options: RunOptions,
    profile_cells: usize,
    cells_override: Option<usize>,
    profile_explicit: bool,
    explicit: BTreeSet<String>,
}

impl RunConfig {
    pub fn new(profile: Option<Profile>) -> Self {
        let detector = profile.unwrap_or(Profile::Desk).detector();
        let cells = detector.grid.dims().1;
        let scene = SceneConfig { extent: detector.grid.extent, ..SceneConfig::default() };
        Self {
            scene,
            detector,
            train: TrainConfig::default(),
            options: RunOptions::default(),
            profile_cells: cells,
            cells_override: None,
            profile_explicit: profile.is_some(),
            explicit: BTreeSet::new(),
        }
    }

    /// Applies one assignment; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "grid.cells" {
            let cells: usize = parse_value(key, value)?;
            if cells == 0 {
                return Err(Error::Config("`grid.cells` must be positive".into()));
            }
            self.cells_override = Some(cells);
            self.explicit.remove("grid.cell_size");
            self.explicit.insert(key.to_string());
            return Ok(());
        }
        let known = self.scene.set(key, value)?
            || self.detector.set(key, value)?
            || self.train.set(key, value)?
            || self.options.set(key, value)?;
        if !known {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        if key == "grid.cell_size" {
            self.cells_override = None;
            self.explicit.remove("grid.cells");
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        for (line, key, value) in parse_settings(&text)? {
            self.set(&key, &value).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        }
        Ok(())
    }

    /// Applies a `key=value` command-line override.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{assignment}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Syncs the grid to the scene extent unless the grid was set directly,
    /// then validates everything.
    pub fn resolve(&mut self) -> Result<()> {
        if !self.is_explicit("grid.extent") {
            self.detector.grid.extent = self.scene.extent;
        }
        if !self.is_explicit("grid.cell_size") {
            let e: Extent = self.detector.grid.extent;
            let cells = self.cells_override.unwrap_or(self.profile_cells);
            self.detector.grid.cell_size = e.width().max(e.depth()) / cells as f64;
        }
        self.scene.validate()?;
        self.detector.validate()?;
        self.train.validate()?;
        if self.options.ablate_seeds == 0 || !(self.options.travel_bin.is_finite() && self.options.travel_bin > 0.0) {
            return Err(Error::Config("ablate.seeds and eval.travel_bin must be positive".into()));
        }
        if let Some(t) = self.options.nms {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("NMS overlap {t} outside [0, 1]")));
            }
        }
        if self.detector.decoder.num_classes < self.scene.classes.len() {
            return Err(Error::Config(format!(
                "scene has {} classes but the model predicts {}",
                self.scene.classes.len(),
                self.detector.decoder.num_classes
            )));
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut all = self.scene.entries();
        all.extend(self.detector.entries());
        all.extend(self.train.entries());
        all.extend(self.options.entries());
        all
    }

    pub fn echo(&self) -> String {
        render_settings(&self.entries())
    }

    /// Rejects a checkpoint whose shape-defining settings disagree with the
    /// ones chosen for this run.
    pub fn check_checkpoint(&self, checkpoint: &DetectorConfig) -> Result<()> {
        let ours: Vec<(String, String)> = self.detector.entries();
        let theirs: Vec<(String, String)> = checkpoint.entries();
        let structural = |k: &str| {
            STRUCTURAL_KEYS.contains(&k) && (self.profile_explicit || self.is_explicit(k) || self.cells_explicit(k))
        };
        for ((k, a), (_, b)) in ours.iter().zip(&theirs) {
            if structural(k) && a != b {
                return Err(Error::Config(format!("checkpoint has {k} = {b} but the run config has {a}")));
            }
        }
        Ok(())
    }

    fn cells_explicit(&self, key: &str) -> bool {
        key == "grid.cell_size" && self.is_explicit("grid.cells")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_follows_scene_extent() {
        let mut c = RunConfig::new(None);
        c.set("scene.extent", "40").unwrap();
        c.resolve().unwrap();
        assert_eq!(c.detector.grid.extent, Extent::square(40.0));
        assert_eq!(c.detector.grid.dims(), (32, 32));
        c.set("grid.cells", "8").unwrap();
        c.resolve().unwrap();
        assert_eq!(c.detector.grid.dims(), (8, 8));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut c = RunConfig::new(None);
        assert!(c.set("model.nonsense", "1").is_err());
        assert!(c.apply_assignment("no_equals_sign").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::new(Some(Profile::PaperShape));
        c.set("train.seed", "7").unwrap();
        c.set("eval.nms", "0.2").unwrap();
        c.resolve().unwrap();
        let mut again = RunConfig::new(None);
        for (_, k, v) in parse_settings(&c.echo()).unwrap() {
            again.set(&k, &v).unwrap();
        }
        again.resolve().unwrap();
        assert_eq!(again.echo(), c.echo());
    }
}
