//! `key = value` settings for scene, model and training configurations.
//!
//! Every configuration type lists its resolved entries and accepts single
//! assignments. Keys are namespaced (`scene.`, `grid.`, `model.`, `train.`).

use std::str::FromStr;

use crate::decoder::{DetectorConfig, RefineSchedule};
use crate::error::{Error, Result};
use crate::scene::{ClassSpec, Extent, SceneConfig};
use crate::training::TrainConfig;

pub trait Settings {
    /// Resolved `(key, value)` pairs in a stable order.
    fn entries(&self) -> Vec<(String, String)>;
    /// Applies one assignment. `Ok(false)` when the key is not recognized.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;
}

pub fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

pub fn format_extent(e: &Extent) -> String {
    format!("{},{},{},{}", e.x_min, e.x_max, e.y_min, e.y_max)
}

pub fn parse_extent(key: &str, value: &str) -> Result<Extent> {
    let v: Vec<f64> = value.split(',').map(|t| parse_value(key, t)).collect::<Result<_>>()?;
    match v.as_slice() {
        [side] => Ok(Extent::square(*side)),
        [a, b, c, d] => Ok(Extent::new(*a, *b, *c, *d)),
        _ => Err(Error::Config(format!("`{key}` expects a side length or x_min,x_max,y_min,y_max"))),
    }
}

fn format_classes(classes: &[ClassSpec]) -> String {
    classes.iter().map(|c| format!("{}:{}:{}:{}", c.width, c.length, c.height, c.jitter)).collect::<Vec<_>>().join(";")
}

fn parse_classes(key: &str, value: &str) -> Result<Vec<ClassSpec>> {
    value
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|spec| {
            let v: Vec<f64> = spec.split(':').map(|t| parse_value(key, t)).collect::<Result<_>>()?;
            match v.as_slice() {
                [w, l, h] => Ok(ClassSpec { width: *w, length: *l, height: *h, jitter: 0.0 }),
                [w, l, h, j] => Ok(ClassSpec { width: *w, length: *l, height: *h, jitter: *j }),
                _ => Err(Error::Config(format!("`{key}` entries are width:length:height[:jitter]"))),
            }
        })
        .collect()
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

impl Settings for SceneConfig {
    fn entries(&self) -> Vec<(String, String)> {
        vec![
            kv("scene.extent", format_extent(&self.extent)),
            kv("scene.min_objects", self.min_objects),
            kv("scene.max_objects", self.max_objects),
            kv("scene.classes", format_classes(&self.classes)),
            kv("scene.surface_density", self.surface_density),
            kv("scene.min_points_per_box", self.min_points_per_box),
            kv("scene.clutter_points", self.clutter_points),
            kv("scene.clutter_sigma", self.clutter_sigma),
            kv("scene.moving", self.moving),
            kv("scene.max_speed", self.max_speed),
            kv("scene.seed", self.seed),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "scene.extent" => self.extent = parse_extent(key, value)?,
            "scene.min_objects" => self.min_objects = parse_value(key, value)?,
            "scene.max_objects" => self.max_objects = parse_value(key, value)?,
            "scene.classes" => self.classes = parse_classes(key, value)?,
            "scene.surface_density" => self.surface_density = parse_value(key, value)?,
            "scene.min_points_per_box" => self.min_points_per_box = parse_value(key, value)?,
            "scene.clutter_points" => self.clutter_points = parse_value(key, value)?,
            "scene.clutter_sigma" => self.clutter_sigma = parse_value(key, value)?,
            "scene.moving" => self.moving = parse_bool(key, value)?,
            "scene.max_speed" => self.max_speed = parse_value(key, value)?,
            "scene.seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl Settings for DetectorConfig {
    fn entries(&self) -> Vec<(String, String)> {
        let d = &self.decoder;
        vec![
            kv("grid.extent", format_extent(&self.grid.extent)),
            kv("grid.cell_size", self.grid.cell_size),
            kv("grid.max_points_per_pillar", self.grid.max_points_per_pillar),
            kv("model.dim", d.dim),
            kv("model.layers", d.layers),
            kv("model.heads", d.heads),
            kv("model.queries", d.queries),
            kv("model.ffn_dim", d.ffn_dim),
            kv("model.num_classes", d.num_classes),
            kv("model.refine", &d.refine),
            kv("model.mask_empty", d.mask_empty),
            kv("model.detach_anchors", d.detach_anchors),
            kv("model.fourier_scale", self.fourier_scale),
            kv("model.fps_start", self.fps_start),
            kv("model.pillar_seed", self.pillar_seed),
            kv("model.delta_scale", self.delta_scale),
            kv("model.size_prior", self.size_prior.map(|v| v.to_string()).join(",")),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "grid.extent" => self.grid.extent = parse_extent(key, value)?,
            "grid.cell_size" => self.grid.cell_size = parse_value(key, value)?,
            "grid.cells" => {
                let cells: usize = parse_value(key, value)?;
                if cells == 0 {
                    return Err(Error::Config("`grid.cells` must be positive".into()));
                }
                self.grid.cell_size = self.grid.extent.width().max(self.grid.extent.depth()) / cells as f64;
            }
            "grid.max_points_per_pillar" => self.grid.max_points_per_pillar = parse_value(key, value)?,
            "model.dim" => {
                self.decoder.dim = parse_value(key, value)?;
                self.grid.feature_dim = self.decoder.dim;
            }
            "model.layers" => self.decoder.layers = parse_value(key, value)?,
            "model.heads" => self.decoder.heads = parse_value(key, value)?,
            "model.queries" => self.decoder.queries = parse_value(key, value)?,
            "model.ffn_dim" => self.decoder.ffn_dim = parse_value(key, value)?,
            "model.num_classes" => self.decoder.num_classes = parse_value(key, value)?,
            "model.refine" => self.decoder.refine = RefineSchedule::parse(value)?,
            "model.mask_empty" => self.decoder.mask_empty = parse_bool(key, value)?,
            "model.detach_anchors" => self.decoder.detach_anchors = parse_bool(key, value)?,
            "model.fourier_scale" => self.fourier_scale = parse_value(key, value)?,
            "model.fps_start" => self.fps_start = parse_value(key, value)?,
            "model.pillar_seed" => self.pillar_seed = parse_value(key, value)?,
            "model.delta_scale" => self.delta_scale = parse_value(key, value)?,
            "model.size_prior" => {
                let v: Vec<f64> = value.split(',').map(|t| parse_value(key, t)).collect::<Result<_>>()?;
                self.size_prior = v.try_into().map_err(|_| Error::Config("`model.size_prior` expects w,l,h".into()))?;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl Settings for TrainConfig {
    fn entries(&self) -> Vec<(String, String)> {
        vec![
            kv("train.stage1_epochs", self.stage1_epochs),
            kv("train.aam_epochs", self.aam_epochs),
            kv("train.stage2_epochs", self.stage2_epochs),
            kv("train.learning_rate", self.learning_rate),
            kv("train.lr_decay", self.lr_decay),
            kv("train.decay_period", self.decay_period),
            kv("train.aam_learning_rate", self.aam_learning_rate),
            kv("train.batch_size", self.batch_size),
            kv("train.aam_batch_size", self.aam_batch_size),
            kv("train.clip_norm", self.clip_norm),
            kv("train.reg_weight", self.loss.regression),
            kv("train.cls_weight", self.loss.classification),
            kv("train.no_object_weight", self.loss.no_object_weight),
            kv("train.cost_reg_weight", self.loss.cost.regression),
            kv("train.cost_cls_weight", self.loss.cost.classification),
            kv("train.seed", self.seed),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "train.stage1_epochs" => self.stage1_epochs = parse_value(key, value)?,
            "train.aam_epochs" => self.aam_epochs = parse_value(key, value)?,
            "train.stage2_epochs" => self.stage2_epochs = parse_value(key, value)?,
            "train.learning_rate" => self.learning_rate = parse_value(key, value)?,
            "train.lr_decay" => self.lr_decay = parse_value(key, value)?,
            "train.decay_period" => self.decay_period = parse_value(key, value)?,
            "train.aam_learning_rate" => self.aam_learning_rate = parse_value(key, value)?,
            "train.batch_size" => self.batch_size = parse_value(key, value)?,
            "train.aam_batch_size" => self.aam_batch_size = parse_value(key, value)?,
            "train.clip_norm" => self.clip_norm = parse_value(key, value)?,
            "train.reg_weight" => self.loss.regression = parse_value(key, value)?,
            "train.cls_weight" => self.loss.classification = parse_value(key, value)?,
            "train.no_object_weight" => self.loss.no_object_weight = parse_value(key, value)?,
            "train.cost_reg_weight" => self.loss.cost.regression = parse_value(key, value)?,
            "train.cost_cls_weight" => self.loss.cost.classification = parse_value(key, value)?,
            "train.seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Parses `key = value` lines; `#` starts a comment. Returns the pairs with
/// their line numbers.
pub fn parse_settings(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected `key = value`, got `{line}`") })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse { line: i + 1, message: "empty key".into() });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render_settings(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
