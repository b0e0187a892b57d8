//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DONNCKP1"            8-byte magic
//! u64                    header length in bytes
//! header                 JSON, see CheckpointHeader
//! f64 × 3·layers·side²   θ, channel-major, then layer, then row-major
//! ```
//!
//! Nothing in the file depends on the machine or the clock, so the same
//! model always serializes to the same bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DonnError, Result};
use crate::model::{DonnModel, ModelConfig};

pub const MAGIC: &[u8; 8] = b"DONNCKP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelConfig,
    pub seed: u64,
    pub epoch: u64,
}

impl CheckpointHeader {
    fn payload_len(&self) -> usize {
        3 * self.model.layers * self.model.side_px * self.model.side_px * 8
    }
}

pub fn checkpoint_bytes(model: &DonnModel, seed: u64, epoch: u64) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model: model.config().clone(),
        seed,
        epoch,
    };
    let json = serde_json::to_vec(&header).map_err(|e| DonnError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + header.payload_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for theta in model.thetas() {
        for v in theta.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, DonnModel)> {
    let bad = |msg: String| DonnError::Format(msg);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad(format!("header length {header_len} exceeds file size")))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| bad(format!("checkpoint header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let payload = &bytes[header_end..];
    if payload.len() != header.payload_len() {
        return Err(bad(format!(
            "payload has {} bytes but header declares 3 x {} layers of {}x{} (= {} bytes)",
            payload.len(),
            header.model.layers,
            header.model.side_px,
            header.model.side_px,
            header.payload_len()
        )));
    }
    let side = header.model.side_px;
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut next_mask = || {
        let v: Vec<f64> = values.by_ref().take(side * side).collect();
        Array2::from_shape_vec((side, side), v).expect("payload length checked")
    };
    let layers = header.model.layers;
    let thetas: [Vec<Array2<f64>>; 3] =
        std::array::from_fn(|_| (0..layers).map(|_| next_mask()).collect());
    let model = DonnModel::from_thetas(header.model.clone(), thetas)?;
    Ok((header, model))
}

/// Writes via a temporary sibling so a crash never leaves a torn file.
pub fn save_checkpoint(path: &Path, model: &DonnModel, seed: u64, epoch: u64) -> Result<()> {
    let bytes = checkpoint_bytes(model, seed, epoch)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| DonnError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DonnError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, DonnModel)> {
    let bytes = fs::read(path).map_err(|e| DonnError::io(path, e))?;
    parse_checkpoint(&bytes)
}
