//! Text checkpoints.
//!
//! ```text
//! CKPT v1
//! CONFIG <key> <value>          one per detector setting
//! TENSOR <name> <group> <rows> <cols>
//! <rows*cols values, space separated, row-major>
//! ...
//! END
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! floating-point number, so a save/load cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::Settings;
use crate::decoder::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

const MAGIC: &str = "CKPT v1";

pub fn checkpoint_to_string<T: Scalar>(det: &Detector<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    for (k, v) in det.config.entries() {
        let _ = writeln!(s, "CONFIG {k} {v}");
    }
    for (_, p) in det.params.iter() {
        let _ = writeln!(s, "TENSOR {} {} {} {}", p.name, p.group.name(), p.value.rows(), p.value.cols());
        let values: Vec<String> = p.value.as_slice().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", values.join(" "));
    }
    s.push_str("END\n");
    s
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn parse_checkpoint<T: Scalar>(text: &str) -> Result<Detector<T>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(Error::Checkpoint(format!("missing `{MAGIC}` header"))),
    }
    let mut config = DetectorConfig::desk();
    let mut store = ParamStore::new();
    let mut ended = false;
    while let Some((n, line)) = lines.next() {
        if let Some(rest) = line.strip_prefix("CONFIG ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            if !config.set(k, v)? {
                return Err(err(n, format!("unknown setting `{k}`")));
            }
        } else if let Some(rest) = line.strip_prefix("TENSOR ") {
            let f: Vec<&str> = rest.split_whitespace().collect();
            let [name, group, rows, cols] = f.as_slice() else {
                return Err(err(n, "expected `TENSOR name group rows cols`"));
            };
            let group = Group::parse(group).ok_or_else(|| err(n, format!("unknown group `{group}`")))?;
            let rows: usize = rows.parse().map_err(|_| err(n, "bad row count"))?;
            let cols: usize = cols.parse().map_err(|_| err(n, "bad column count"))?;
            let (vn, values) = lines.next().ok_or_else(|| err(n + 1, "missing tensor values"))?;
            let data: Vec<T> = values
                .split_whitespace()
                .map(|t| t.parse::<T>().map_err(|_| err(vn, format!("bad value `{t}`"))))
                .collect::<Result<_>>()?;
            if data.len() != rows * cols {
                return Err(err(vn, format!("{} values for a {rows}x{cols} tensor", data.len())));
            }
            store.add(*name, group, Matrix::from_vec(rows, cols, data)?);
        } else if line.trim() == "END" {
            ended = true;
            break;
        } else if !line.trim().is_empty() {
            return Err(err(n, format!("unexpected line `{}`", line.chars().take(40).collect::<String>())));
        }
    }
    if !ended {
        return Err(Error::Checkpoint("truncated file (no END marker)".into()));
    }
    Detector::from_params(config, store)
}

pub fn save_checkpoint<T: Scalar>(det: &Detector<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(det))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Detector<T>> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

/// Copies every parameter of `group` from `source` into `target`.
pub fn transplant_group<T: Scalar>(target: &mut Detector<T>, source: &Detector<T>, group: Group) -> Result<()> {
    let ids = target.params.ids_in(group);
    let src = source.params.ids_in(group);
    if ids.len() != src.len() {
        return Err(Error::Checkpoint(format!("{} `{}` tensors, source has {}", ids.len(), group.name(), src.len())));
    }
    for (t, s) in ids.into_iter().zip(src) {
        let value = source.params.value(s);
        if value.shape() != target.params.value(t).shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for `{}`", target.params.get(t).name)));
        }
        *target.params.value_mut(t) = value.clone();
    }
    Ok(())
}
