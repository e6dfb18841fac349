//! Text export of per-layer cross-attention maps for one query.
//!
//! One file per layer, named `layer<k>_query<q>.txt`:
//!
//! ```text
//! ATTN v1 layer <k> query <q> rows <H> cols <W>
//! ANCHOR x y z
//! BOX cx cy cz w l h yaw cls score
//! CELL row col weight      (H*W lines, head-averaged, row-major)
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::Inference;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Head-averaged attention of `query` over the grid at `layer`.
pub fn mean_attention<T: Scalar>(inf: &Inference<T>, layer: usize, query: usize) -> Result<Vec<f64>> {
    let heads = inf
        .cross_attention
        .get(layer)
        .ok_or_else(|| Error::Config(format!("no attention recorded for layer {layer}")))?;
    let first = heads.first().ok_or(Error::Empty("attention heads"))?;
    if query >= first.rows() {
        return Err(Error::Config(format!("query {query} out of range 0..{}", first.rows())));
    }
    let mut acc = vec![0.0; first.cols()];
    for w in heads {
        for (a, v) in acc.iter_mut().zip(w.row(query)) {
            *a += v.as_f64();
        }
    }
    let n = heads.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn attention_record<T: Scalar>(inf: &Inference<T>, layer: usize, query: usize) -> Result<String> {
    let weights = mean_attention(inf, layer, query)?;
    let (h, w) = inf.grid_dims;
    let anchor = inf.layer_anchors[layer][query];
    let params = &inf.layer_boxes[layer][query];
    let b = params.to_box(anchor);
    let score = params.probabilities()[params.argmax_class()];
    let mut s = String::new();
    let _ = writeln!(s, "ATTN v1 layer {layer} query {query} rows {h} cols {w}");
    let _ = writeln!(s, "ANCHOR {:.6} {:.6} {:.6}", anchor.x, anchor.y, anchor.z);
    let _ = writeln!(
        s,
        "BOX {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {} {:.6}",
        b.center.x,
        b.center.y,
        b.center.z,
        b.width,
        b.length,
        b.height,
        b.yaw,
        params.argmax_class(),
        score
    );
    for (i, v) in weights.iter().enumerate() {
        let _ = writeln!(s, "CELL {} {} {:.9}", i / w, i % w, v);
    }
    Ok(s)
}

/// Writes one file per decoder layer into `dir`, returning the paths.
pub fn write_attention_maps<T: Scalar>(
    inf: &Inference<T>,
    query: usize,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    (0..inf.cross_attention.len())
        .map(|k| {
            let path = dir.join(format!("layer{k}_query{query}.txt"));
            std::fs::write(&path, attention_record(inf, k, query)?)?;
            Ok(path)
        })
        .collect()
}
