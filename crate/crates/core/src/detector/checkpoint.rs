//! Checkpoint file: a `podmodel-v1` header line, one JSON metadata line,
//! then the parameters as little-endian `f64`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Architecture, DetectorModel};
use super::train::TrainConfig;
use crate::{PodError, Result};

pub const CHECKPOINT_HEADER: &str = "podmodel-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: Architecture,
    pub param_count: usize,
    pub train_config: TrainConfig,
    pub wall_time_s: f64,
    pub history_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: DetectorModel,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(
    path: &Path,
    model: &DetectorModel,
    train_config: &TrainConfig,
    wall_time_s: f64,
    history_len: usize,
) -> Result<()> {
    let meta = CheckpointMeta {
        arch: model.arch.clone(),
        param_count: model.params.len(),
        train_config: train_config.clone(),
        wall_time_s,
        history_len,
    };
    let json = serde_json::to_string(&meta).map_err(|e| PodError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(json.len() + 16 + 8 * model.params.len());
    buf.extend_from_slice(CHECKPOINT_HEADER.as_bytes());
    buf.push(b'\n');
    buf.extend_from_slice(json.as_bytes());
    buf.push(b'\n');
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PodError::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| PodError::io(path, e))?;
    f.write_all(&buf).map_err(|e| PodError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = fs::File::open(path).map_err(|e| PodError::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| PodError::io(path, e))?;
    if header.trim_end() != CHECKPOINT_HEADER {
        return Err(PodError::Checkpoint(format!(
            "{}: bad header `{}`",
            path.display(),
            header.trim_end()
        )));
    }
    let mut meta_line = String::new();
    reader
        .read_line(&mut meta_line)
        .map_err(|e| PodError::io(path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(meta_line.trim_end())
        .map_err(|e| PodError::Checkpoint(format!("{}: {e}", path.display())))?;
    meta.arch.validate()?;
    if meta.arch.param_count() != meta.param_count {
        return Err(PodError::Checkpoint(
            "parameter count does not match architecture".into(),
        ));
    }
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| PodError::io(path, e))?;
    if bytes.len() != 8 * meta.param_count {
        return Err(PodError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            8 * meta.param_count,
            bytes.len()
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(PodError::Checkpoint("non-finite parameter".into()));
    }
    Ok(Checkpoint {
        model: DetectorModel {
            arch: meta.arch.clone(),
            params,
        },
        meta,
    })
}
