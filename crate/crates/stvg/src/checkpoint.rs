//! Checkpoints: a JSON manifest (name, shape, offset, length per tensor)
//! next to a single little-endian f64 blob. Loading into an identically
//! configured model reproduces forward outputs bitwise.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tapegrad::{AdamW, OptimizerState};

use crate::error::{Error, Result};
use crate::layers::ParamSet;

const FORMAT: &str = "stvg-checkpoint-v1";
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: u64,
    /// Number of f64 values.
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    opt_step: usize,
    tensors: Vec<TensorEntry>,
}

struct BlobWriter {
    entries: Vec<TensorEntry>,
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn new() -> Self {
        BlobWriter { entries: Vec::new(), bytes: Vec::new() }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, data: &[f64]) {
        self.entries.push(TensorEntry {
            name,
            shape,
            offset: self.bytes.len() as u64,
            len: data.len() as u64,
        });
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Serialize parameters and (when given) optimizer moments, step counter,
/// and EMA shadow into `dir`.
pub fn save(dir: &Path, params: &ParamSet, optimizer: Option<&AdamW>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut blob = BlobWriter::new();
    for (name, t) in params.entries() {
        blob.push(format!("param.{name}"), t.shape().to_vec(), &t.data());
    }
    let mut opt_step = 0;
    if let Some(opt) = optimizer {
        let state = opt.export_state();
        opt_step = state.step;
        for (name, m, v, shadow) in &state.moments {
            let shape = vec![m.len()];
            blob.push(format!("opt_m.{name}"), shape.clone(), m);
            blob.push(format!("opt_v.{name}"), shape.clone(), v);
            if let Some(s) = shadow {
                blob.push(format!("ema.{name}"), shape, s);
            }
        }
    }
    let manifest = Manifest { format: FORMAT.into(), opt_step, tensors: blob.entries };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    let mut f = std::fs::File::create(dir.join(BLOB))?;
    f.write_all(&blob.bytes)?;
    Ok(())
}

fn read_tensor(blob: &[u8], e: &TensorEntry) -> Result<Vec<f64>> {
    let start = e.offset as usize;
    let end = start + e.len as usize * 8;
    if end > blob.len() {
        return Err(Error::Format(format!(
            "checkpoint blob truncated: `{}` needs bytes {start}..{end}, blob has {}",
            e.name,
            blob.len()
        )));
    }
    Ok(blob[start..end].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
}

/// Load parameters into an identically configured model; optionally restore
/// the optimizer. Every model parameter must be present with a matching
/// shape.
pub fn load(dir: &Path, params: &ParamSet, optimizer: Option<&mut AdamW>) -> Result<()> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)
            .map_err(|e| Error::Format(format!("bad checkpoint manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!("unknown checkpoint format `{}`", manifest.format)));
    }
    let blob = std::fs::read(dir.join(BLOB))?;

    let find = |name: &str| manifest.tensors.iter().find(|e| e.name == name);
    for (name, t) in params.entries() {
        let entry = find(&format!("param.{name}")).ok_or_else(|| {
            Error::Format(format!("checkpoint is missing parameter `{name}`"))
        })?;
        if entry.shape != t.shape() {
            return Err(Error::Format(format!(
                "parameter `{name}`: checkpoint shape {:?} does not match model shape {:?}",
                entry.shape,
                t.shape()
            )));
        }
        let data = read_tensor(&blob, entry)?;
        t.modify_data(|d| d.copy_from_slice(&data));
    }

    if let Some(opt) = optimizer {
        let mut moments = Vec::new();
        for (name, t) in params.entries() {
            let (Some(me), Some(ve)) = (find(&format!("opt_m.{name}")), find(&format!("opt_v.{name}")))
            else {
                continue;
            };
            let m = read_tensor(&blob, me)?;
            let v = read_tensor(&blob, ve)?;
            if m.len() != t.numel() {
                return Err(Error::Format(format!(
                    "optimizer state for `{name}` has {} values, parameter has {}",
                    m.len(),
                    t.numel()
                )));
            }
            let shadow = match find(&format!("ema.{name}")) {
                Some(se) => Some(read_tensor(&blob, se)?),
                None => None,
            };
            moments.push((name.clone(), m, v, shadow));
        }
        opt.import_state(OptimizerState { step: manifest.opt_step, moments });
    }
    Ok(())
}

/// Names listed in a checkpoint manifest (for inspection and tests).
pub fn manifest_names(dir: &Path) -> Result<Vec<String>> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)
            .map_err(|e| Error::Format(format!("bad checkpoint manifest: {e}")))?;
    Ok(manifest.tensors.into_iter().map(|e| e.name).collect())
}
