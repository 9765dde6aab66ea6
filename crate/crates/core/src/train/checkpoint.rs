//! Checkpoint files.
//!
//! Layout: the 8-byte magic `LSRMCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! tensor as little-endian `f64` values in header order: parameters,
//! optimizer buffers, and the best parameters when present.

use super::{AdamConfig, OptimizerState, Result, Stage, TrainError, TrainLog, TrainPlan, TrainState};
use crate::model::{Lsrm, ModelShape};
use crate::tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LSRMCKPT";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum OptimizerHeader {
    Adam { config: AdamConfig, step: u64 },
    Sgd { momentum: f64, velocity: bool },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    shape: ModelShape,
    plan: TrainPlan,
    plan_digest: String,
    next_epoch: usize,
    step: u64,
    stage: Stage,
    stage_losses: Vec<f64>,
    finished: bool,
    log: TrainLog,
    optimizer: OptimizerHeader,
    has_best: bool,
    /// Parameter names and shapes in storage order.
    tensors: Vec<(String, Vec<usize>)>,
}

fn err(path: &Path, reason: impl Into<String>) -> TrainError {
    TrainError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn push_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes `state` to `path` atomically (temporary file, then rename).
pub fn save_checkpoint(path: &Path, state: &TrainState, plan: &TrainPlan) -> Result<()> {
    let params = state.model.params();
    let optimizer = match &state.optimizer {
        OptimizerState::Adam { config, step, .. } => OptimizerHeader::Adam {
            config: *config,
            step: *step,
        },
        OptimizerState::Sgd { momentum, velocity } => OptimizerHeader::Sgd {
            momentum: *momentum,
            velocity: velocity.is_some(),
        },
    };
    let header = Header {
        shape: *state.model.shape(),
        plan: plan.clone(),
        plan_digest: plan.digest(),
        next_epoch: state.next_epoch,
        step: state.step,
        stage: state.stage,
        stage_losses: state.stage_losses.clone(),
        finished: state.finished,
        log: state.log.clone(),
        optimizer,
        has_best: state.best_params.is_some(),
        tensors: params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| err(path, e.to_string()))?;
    let mut buf = Vec::with_capacity(json.len() + 8 * 3 * params.numel() + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in params.iter() {
        push_tensor(&mut buf, &p.value);
    }
    match &state.optimizer {
        OptimizerState::Adam { m, v, .. } => m.iter().chain(v).for_each(|t| push_tensor(&mut buf, t)),
        OptimizerState::Sgd { velocity: Some(v), .. } => v.iter().for_each(|t| push_tensor(&mut buf, t)),
        OptimizerState::Sgd { velocity: None, .. } => {}
    }
    if let Some(best) = &state.best_params {
        best.iter().for_each(|p| push_tensor(&mut buf, &p.value));
    }
    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| err(path, e.to_string());
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&buf).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn tensor(&mut self, shape: &[usize]) -> Option<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape.to_vec(), data).ok()
    }
}

/// Field-by-field differences between two shapes.
fn shape_diff(found: &ModelShape, expected: &ModelShape) -> Vec<String> {
    let pairs = [
        ("n_layer", found.n_layer, expected.n_layer),
        ("d_model", found.d_model, expected.d_model),
        ("n_head", found.n_head, expected.n_head),
        ("d_ff", found.d_ff, expected.d_ff),
        ("s", found.s, expected.s),
        ("n_items", found.n_items, expected.n_items),
    ];
    pairs
        .iter()
        .filter(|(_, a, b)| a != b)
        .map(|(n, a, b)| format!("{n}: checkpoint {a}, expected {b}"))
        .collect()
}

/// Reads a checkpoint. With `expected`, any difference in model shape is
/// reported field by field.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelShape>) -> Result<(TrainState, TrainPlan)> {
    let bytes = fs::read(path).map_err(|e| err(path, e.to_string()))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let truncated = || err(path, "file is truncated");
    if r.take(8) != Some(MAGIC.as_slice()) {
        return Err(err(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(r.take(4).ok_or_else(truncated)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(err(path, format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let len = u64::from_le_bytes(r.take(8).ok_or_else(truncated)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(len).ok_or_else(truncated)?)
        .map_err(|e| err(path, format!("bad header: {e}")))?;
    if let Some(exp) = expected {
        let diff = shape_diff(&header.shape, exp);
        if !diff.is_empty() {
            return Err(err(path, format!("model shape mismatch: {}", diff.join("; "))));
        }
    }
    if header.plan.digest() != header.plan_digest {
        return Err(err(path, "plan digest does not match the stored plan"));
    }
    let read_store = |r: &mut Reader| -> Result<ParamStore> {
        let mut s = ParamStore::new();
        for (name, shape) in &header.tensors {
            s.add(name.clone(), r.tensor(shape).ok_or_else(truncated)?);
        }
        Ok(s)
    };
    let read_list = |r: &mut Reader| -> Result<Vec<Tensor>> {
        header
            .tensors
            .iter()
            .map(|(_, shape)| r.tensor(shape).ok_or_else(truncated))
            .collect()
    };
    let params = read_store(&mut r)?;
    let optimizer = match header.optimizer {
        OptimizerHeader::Adam { config, step } => OptimizerState::Adam {
            config,
            m: read_list(&mut r)?,
            v: read_list(&mut r)?,
            step,
        },
        OptimizerHeader::Sgd { momentum, velocity } => OptimizerState::Sgd {
            momentum,
            velocity: if velocity { Some(read_list(&mut r)?) } else { None },
        },
    };
    let best_params = if header.has_best { Some(read_store(&mut r)?) } else { None };
    if r.pos != bytes.len() {
        return Err(err(path, "trailing bytes after the last tensor"));
    }
    let model = Lsrm::from_params(header.shape, params).map_err(|e| err(path, e.to_string()))?;
    Ok((
        TrainState {
            model,
            optimizer,
            next_epoch: header.next_epoch,
            step: header.step,
            stage: header.stage,
            stage_losses: header.stage_losses,
            best_params,
            log: header.log,
            finished: header.finished,
        },
        header.plan,
    ))
}
