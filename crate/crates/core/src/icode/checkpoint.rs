//! Versioned JSON checkpoints of both residual networks.
//!
//! Weights are stored row-major next to their shapes. Floats are written with
//! round-trip precision, so a save/load cycle reproduces every bit.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Dense, Mlp};
use super::{FeatureScale, NetworkParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    input: usize,
    output: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointRecord {
    format_version: u32,
    feature_scale: FeatureScale,
    drift: Vec<LayerRecord>,
    gain: Vec<LayerRecord>,
}

fn to_records(net: &Mlp) -> Vec<LayerRecord> {
    net.layers
        .iter()
        .map(|l| LayerRecord {
            input: l.input_dim(),
            output: l.output_dim(),
            weight: l.weight.iter().copied().collect(),
            bias: l.bias.to_vec(),
        })
        .collect()
}

fn from_records(records: Vec<LayerRecord>) -> Result<Mlp> {
    let layers = records
        .into_iter()
        .map(|r| {
            let weight = Array2::from_shape_vec((r.output, r.input), r.weight)
                .map_err(|e| Error::Checkpoint(format!("weight shape: {e}")))?;
            if r.bias.len() != r.output {
                return Err(Error::Checkpoint(format!("bias has {} entries, expected {}", r.bias.len(), r.output)));
            }
            Ok(Dense { weight, bias: Array1::from(r.bias) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mlp { layers })
}

pub fn checkpoint_to_json(p: &NetworkParams) -> Result<String> {
    let rec = CheckpointRecord {
        format_version: CHECKPOINT_FORMAT_VERSION,
        feature_scale: p.feature_scale,
        drift: to_records(&p.drift),
        gain: to_records(&p.gain),
    };
    serde_json::to_string(&rec).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn checkpoint_from_json(text: &str) -> Result<NetworkParams> {
    let rec: CheckpointRecord = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if rec.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
            rec.format_version
        )));
    }
    let p = NetworkParams { drift: from_records(rec.drift)?, gain: from_records(rec.gain)?, feature_scale: rec.feature_scale };
    p.validate().map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(m),
        other => Error::Checkpoint(other.to_string()),
    })?;
    Ok(p)
}

pub fn save_checkpoint(path: &Path, p: &NetworkParams) -> Result<()> {
    std::fs::write(path, checkpoint_to_json(p)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    checkpoint_from_json(&std::fs::read_to_string(path)?)
}
