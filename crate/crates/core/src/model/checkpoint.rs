//! Checkpoint directories: `params.bin` (raw little-endian f64 blob),
//! optional `optimizer.bin`, and a `meta.json` sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dds, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DDSBLOB1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ModelConfig,
    /// Optimizer steps completed.
    pub step: u64,
    pub seed: u64,
    /// Run settings that must match on resume, as a JSON object.
    #[serde(default)]
    pub run: serde_json::Value,
    /// Hex sha256 of `params.bin`.
    pub params_sha256: String,
}

fn write_blob(path: &Path, values: &[f64]) -> Result<String> {
    let mut bytes = Vec::with_capacity(16 + 8 * values.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn read_blob(path: &Path) -> Result<(Vec<f64>, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::invalid(format!("{} is not a parameter blob", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad());
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 8 * n {
        return Err(bad());
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((values, hex::encode(Sha256::digest(&bytes))))
}

/// Writes `model` (and optionally optimizer state) into `dir`, filling in
/// `meta.params_sha256`.
pub fn save_checkpoint(dir: &Path, model: &Dds, meta: &CheckpointMeta, optimizer: Option<&[f64]>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sha = write_blob(&dir.join("params.bin"), &model.params().flatten())?;
    if let Some(opt) = optimizer {
        write_blob(&dir.join("optimizer.bin"), opt)?;
    }
    let meta = CheckpointMeta {
        params_sha256: sha,
        model: model.config().clone(),
        ..meta.clone()
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Restores a model plus its metadata and optimizer state if present.
pub fn load_checkpoint(dir: &Path) -> Result<(Dds, CheckpointMeta, Option<Vec<f64>>)> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {} (expected {CHECKPOINT_VERSION})",
            meta.version
        )));
    }
    let (flat, sha) = read_blob(&dir.join("params.bin"))?;
    if sha != meta.params_sha256 {
        return Err(Error::invalid(format!("{}: parameter hash mismatch", dir.display())));
    }
    let mut model = Dds::new(meta.model.clone(), meta.seed)?;
    if !model.params_mut().load_flat(&flat) {
        return Err(Error::Incompatible(format!(
            "parameter count {} does not match model config ({})",
            flat.len(),
            model.params().scalar_count()
        )));
    }
    let opt_path = dir.join("optimizer.bin");
    let optimizer = if opt_path.exists() {
        Some(read_blob(&opt_path)?.0)
    } else {
        None
    };
    Ok((model, meta, optimizer))
}

/// Field-level differences between two serializable values, one line per
/// differing leaf (`path: left != right`).
pub fn config_diff<T: Serialize>(left: &T, right: &T) -> Result<Vec<String>> {
    let a = serde_json::to_value(left)?;
    let b = serde_json::to_value(right)?;
    let mut out = Vec::new();
    diff_values("", &a, &b, &mut out);
    Ok(out)
}

pub(crate) fn diff_values(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let null = Value::Null;
                diff_values(&p, x.get(k).unwrap_or(&null), y.get(k).unwrap_or(&null), out);
            }
        }
        _ if a != b => out.push(format!("{path}: {a} != {b}")),
        _ => {}
    }
}
