//! Checkpoints: one JSON header line followed by little-endian `f32` parameters.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ModelConfig, SeqModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "pausebench-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub shapes: Vec<(String, Vec<usize>)>,
    pub n_params: usize,
    /// Free-form provenance (training config, feature kind, history).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, model: &SeqModel, seed: u64, extra: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config().clone(),
        seed,
        shapes: model
            .layout()
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.shape.clone()))
            .collect(),
        n_params: model.params().len(),
        extra,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for &p in model.params() {
        w.write_all(&(p as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(SeqModel, CheckpointHeader)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Config(format!(
            "{}: unknown checkpoint format {:?}",
            path.display(),
            header.format
        )));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
    if blob.len() != header.n_params * 4 {
        return Err(Error::LengthMismatch {
            what: "checkpoint parameter bytes",
            left: blob.len(),
            right: header.n_params * 4,
        });
    }
    let params = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let model = SeqModel::from_params(header.config.clone(), params)?;
    Ok((model, header))
}
