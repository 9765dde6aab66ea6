//! Decoder-only transformer for next-item prediction.
//!
//! Input rows are left-padded windows of item indices. Each block applies
//! pre-LayerNorm causal multi-head attention and a pre-LayerNorm GeLU
//! feed-forward network, both with residual connections. The output head
//! reuses the item embedding table.

mod batch;
mod forward;

pub use batch::Batch;
pub use forward::{ForwardOptions, ModelOutput};

use crate::data::ItemIdx;
use crate::tensor::{ParamId, ParamStore, Tensor, TensorError};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard deviation of the weight initialisation.
pub const INIT_STD: f64 = 0.02;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model shape: {0}")]
    InvalidShape(String),
    #[error("sequence of length {len} exceeds the window s = {s}")]
    SequenceTooLong { len: usize, s: usize },
    #[error("item index {index} outside the catalog of {n} items")]
    ItemOutOfRange { index: ItemIdx, n: usize },
    #[error("empty history")]
    EmptyHistory,
    #[error("parameter {name}: {reason}")]
    BadParameter { name: String, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_layer: usize,
    pub d_model: usize,
    pub n_head: usize,
    pub d_ff: usize,
    /// Maximum sequence length.
    pub s: usize,
    /// Catalog size (real items, padding excluded).
    pub n_items: usize,
}

impl ModelShape {
    /// A shape with `d_ff = 4·d_model`, validated.
    pub fn standard(n_layer: usize, d_model: usize, n_head: usize, s: usize, n_items: usize) -> Result<Self> {
        let shape = Self {
            n_layer,
            d_model,
            n_head,
            d_ff: 4 * d_model,
            s,
            n_items,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::InvalidShape(m));
        if self.n_layer == 0 || self.d_model == 0 || self.n_head == 0 || self.d_ff == 0 {
            return fail(format!("all dimensions must be positive: {self:?}"));
        }
        if !self.d_model.is_multiple_of(self.n_head) {
            return fail(format!(
                "d_model = {} is not divisible by n_head = {}",
                self.d_model, self.n_head
            ));
        }
        if self.s == 0 || self.n_items == 0 {
            return fail(format!("s and n_items must be positive: {self:?}"));
        }
        Ok(())
    }

    /// Embedding rows: every item plus the padding row.
    pub fn vocab(&self) -> usize {
        self.n_items + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }

    /// Item and position embedding parameters.
    pub fn embedding_params(&self) -> u64 {
        ((self.vocab() + self.s) * self.d_model) as u64
    }

    /// Every trainable scalar, including biases and norm parameters.
    pub fn total_params(&self) -> u64 {
        let (d, f, l) = (self.d_model as u64, self.d_ff as u64, self.n_layer as u64);
        let per_layer = 4 * d * d + 2 * d * f + f + d + 4 * d;
        self.embedding_params() + l * per_layer + 2 * d
    }
}

/// Attention and feed-forward weight matrices, excluding biases, norms and
/// embeddings: `12·n_layer·d_model²` when `d_ff = 4·d_model`.
pub fn count_non_embedding_params(shape: &ModelShape) -> u64 {
    let (d, f, l) = (shape.d_model as u64, shape.d_ff as u64, shape.n_layer as u64);
    l * (4 * d * d + 2 * d * f)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIds {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamIds {
    pub item_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<LayerIds>,
    pub final_gain: ParamId,
    pub final_bias: ParamId,
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Parameter names, shapes and initialisers in storage order.
fn layout(shape: &ModelShape) -> Vec<(String, Vec<usize>, Init)> {
    let (d, f) = (shape.d_model, shape.d_ff);
    let mut v = vec![
        ("item_emb".to_string(), vec![shape.vocab(), d], Init::Normal),
        ("pos_emb".to_string(), vec![shape.s, d], Init::Normal),
    ];
    for l in 0..shape.n_layer {
        let p = |n: &str| format!("layer{l}.{n}");
        v.extend([
            (p("ln1.gain"), vec![d], Init::Ones),
            (p("ln1.bias"), vec![d], Init::Zeros),
            (p("attn.wq"), vec![d, d], Init::Normal),
            (p("attn.wk"), vec![d, d], Init::Normal),
            (p("attn.wv"), vec![d, d], Init::Normal),
            (p("attn.wo"), vec![d, d], Init::Normal),
            (p("ln2.gain"), vec![d], Init::Ones),
            (p("ln2.bias"), vec![d], Init::Zeros),
            (p("ffn.w1"), vec![d, f], Init::Normal),
            (p("ffn.b1"), vec![f], Init::Zeros),
            (p("ffn.w2"), vec![f, d], Init::Normal),
            (p("ffn.b2"), vec![d], Init::Zeros),
        ]);
    }
    v.push(("final_ln.gain".to_string(), vec![d], Init::Ones));
    v.push(("final_ln.bias".to_string(), vec![d], Init::Zeros));
    v
}

/// A model: its shape and parameter values.
#[derive(Debug, Clone)]
pub struct Lsrm {
    shape: ModelShape,
    params: ParamStore,
    ids: ParamIds,
}

impl Lsrm {
    /// Weights from N(0, 0.02²) clamped to ±2σ, zero biases, unit gains.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut store = ParamStore::new();
        for (k, (name, dims, init)) in layout(&shape).into_iter().enumerate() {
            let t = match init {
                Init::Zeros => Tensor::zeros(dims),
                Init::Ones => Tensor::full(dims, 1.0),
                Init::Normal => {
                    let mut rng = crate::rng::stream(seed, &[0x1A17, k as u64]);
                    Tensor::from_fn(dims, |_| {
                        normal.sample(&mut rng).clamp(-2.0 * INIT_STD, 2.0 * INIT_STD)
                    })
                }
            };
            store.add(name, t);
        }
        Self::from_params(shape, store)
    }

    /// Wraps an existing parameter set, checking every name and shape.
    pub fn from_params(shape: ModelShape, params: ParamStore) -> Result<Self> {
        shape.validate()?;
        let expected = layout(&shape);
        if params.len() != expected.len() {
            return Err(ModelError::BadParameter {
                name: "<store>".into(),
                reason: format!("expected {} tensors, found {}", expected.len(), params.len()),
            });
        }
        for (name, dims, _) in &expected {
            let id = params.find(name).ok_or_else(|| ModelError::BadParameter {
                name: name.clone(),
                reason: "missing".into(),
            })?;
            let got = params.value(id).shape();
            if got != dims.as_slice() {
                return Err(ModelError::BadParameter {
                    name: name.clone(),
                    reason: format!("shape {got:?}, expected {dims:?}"),
                });
            }
        }
        let id = |n: &str| params.find(n).expect("checked above");
        let layers = (0..shape.n_layer)
            .map(|l| {
                let p = |n: &str| id(&format!("layer{l}.{n}"));
                LayerIds {
                    ln1_gain: p("ln1.gain"),
                    ln1_bias: p("ln1.bias"),
                    wq: p("attn.wq"),
                    wk: p("attn.wk"),
                    wv: p("attn.wv"),
                    wo: p("attn.wo"),
                    ln2_gain: p("ln2.gain"),
                    ln2_bias: p("ln2.bias"),
                    w1: p("ffn.w1"),
                    b1: p("ffn.b1"),
                    w2: p("ffn.w2"),
                    b2: p("ffn.b2"),
                }
            })
            .collect();
        let ids = ParamIds {
            item_emb: id("item_emb"),
            pos_emb: id("pos_emb"),
            layers,
            final_gain: id("final_ln.gain"),
            final_bias: id("final_ln.bias"),
        };
        Ok(Self { shape, params, ids })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub(crate) fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn item_embedding(&self) -> ParamId {
        self.ids.item_emb
    }
}

#[cfg(test)]
mod tests;
