//! Two-stage optimisation: Adam until validation loss plateaus, then SGD
//! until it plateaus again, with layer-wise dropout and a cosine schedule.

mod checkpoint;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use optim::{adam_step, sgd_step, AdamConfig, OptimizerState};
pub use schedule::{cosine_lr, detect_switchover, epochs_without_improvement, layerwise_dropout_rates};
pub use trainer::{evaluate_loss, train_two_stage, TrainOutcome, TrainState, Trainer};

use crate::model::ModelError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training plan: {0}")]
    InvalidPlan(String),
    #[error("optimizer state is {found}, expected {expected}")]
    VariantMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: u64 },
    #[error("no user has at least two training interactions")]
    NoTrainingData,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Which parts of the two-stage recipe are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Layer-wise dropout and the optimizer switch.
    #[default]
    Both,
    /// Uniform dropout at the mean of the endpoints; switch kept.
    NoLayerwiseDropout,
    /// Layer-wise dropout, Adam throughout.
    NoSwitchover,
    /// Uniform dropout, Adam throughout.
    None,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Both,
        Ablation::NoLayerwiseDropout,
        Ablation::NoSwitchover,
        Ablation::None,
    ];

    pub fn layerwise(self) -> bool {
        matches!(self, Ablation::Both | Ablation::NoSwitchover)
    }

    pub fn switchover(self) -> bool {
        matches!(self, Ablation::Both | Ablation::NoLayerwiseDropout)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Both => "both",
            Ablation::NoLayerwiseDropout => "no_lad",
            Ablation::NoSwitchover => "no_so",
            Ablation::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Adam,
    Sgd,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    pub batch_size: usize,
    /// Total epoch budget across both stages.
    pub max_epochs: usize,
    pub lr_peak: f64,
    pub lr_floor: f64,
    /// Warmup length as a fraction of the planned steps.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    /// Dropout endpoints; `None` picks defaults from the depth.
    pub dropout_bottom: Option<f64>,
    pub dropout_top: Option<f64>,
    pub patience: usize,
    pub tolerance: f64,
    /// Epochs reserved for the SGD stage when Adam never plateaus.
    pub sgd_min_epochs: usize,
    pub sgd_lr_factor: f64,
    pub sgd_momentum: f64,
    pub adam: AdamConfig,
    /// Sequences per gradient micro-chunk; chunks run in parallel.
    pub chunk_size: usize,
    pub eval_batch: usize,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_epochs: 30,
            lr_peak: 1e-3,
            lr_floor: 1e-5,
            warmup_fraction: 0.05,
            weight_decay: 1e-8,
            dropout_bottom: None,
            dropout_top: None,
            patience: 2,
            tolerance: 1e-4,
            sgd_min_epochs: 1,
            sgd_lr_factor: 1.0,
            sgd_momentum: 0.0,
            adam: AdamConfig::default(),
            chunk_size: 16,
            eval_batch: 256,
            ablation: Ablation::Both,
            seed: 0,
        }
    }
}

impl TrainPlan {
    /// Dropout endpoints: 0.4 → 0.1 for 12 or more layers, uniform 0.2 for
    /// four or fewer, interpolated in between.
    pub fn dropout_endpoints(&self, n_layer: usize) -> (f64, f64) {
        let (bottom, top) = if n_layer >= 12 {
            (0.4, 0.1)
        } else if n_layer <= 4 {
            (0.2, 0.2)
        } else {
            let f = (n_layer - 4) as f64 / 8.0;
            (0.2 + 0.2 * f, 0.2 - 0.1 * f)
        };
        (self.dropout_bottom.unwrap_or(bottom), self.dropout_top.unwrap_or(top))
    }

    /// Per-layer rates after applying the ablation switch.
    pub fn dropout_rates(&self, n_layer: usize) -> Result<Vec<f64>> {
        let (bottom, top) = self.dropout_endpoints(n_layer);
        let rates = layerwise_dropout_rates(n_layer, bottom, top)?;
        Ok(if self.ablation.layerwise() {
            rates
        } else {
            vec![(bottom + top) / 2.0; n_layer]
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::InvalidPlan(m.to_string()));
        if self.batch_size == 0 || self.chunk_size == 0 || self.eval_batch == 0 {
            return fail("batch_size, chunk_size and eval_batch must be positive");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive");
        }
        if self.ablation.switchover() && (self.sgd_min_epochs == 0 || self.max_epochs <= self.sgd_min_epochs) {
            return fail("with the optimizer switch enabled, need 1 <= sgd_min_epochs < max_epochs");
        }
        if !(self.lr_peak >= 0.0 && self.lr_floor >= 0.0 && self.lr_floor <= self.lr_peak) {
            return fail("learning rates must satisfy 0 <= lr_floor <= lr_peak");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        if !(self.tolerance >= 0.0) || !(self.sgd_lr_factor >= 0.0) || !(0.0..1.0).contains(&self.sgd_momentum) {
            return fail("tolerance and sgd_lr_factor must be non-negative, sgd_momentum in [0, 1)");
        }
        let (b, t) = self.dropout_endpoints(12);
        layerwise_dropout_rates(2, b, t)?;
        Ok(())
    }

    /// sha256 of the plan's JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// One epoch of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Validation loss before the first update.
    pub initial_valid_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Index of the first SGD epoch.
    pub switchover_epoch: Option<usize>,
    pub best_epoch: Option<usize>,
    pub best_valid_loss: Option<f64>,
}

impl TrainLog {
    /// Number of Adam→SGD transitions between consecutive records.
    pub fn transitions(&self) -> usize {
        self.epochs
            .windows(2)
            .filter(|w| w[0].stage == Stage::Adam && w[1].stage == Stage::Sgd)
            .count()
    }

    pub fn final_valid_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.valid_loss)
    }

    /// Everything except wall-clock times.
    pub fn losses(&self) -> Vec<(usize, Stage, u64, u64, u64)> {
        self.epochs
            .iter()
            .map(|e| (e.epoch, e.stage, e.train_loss.to_bits(), e.valid_loss.to_bits(), e.lr.to_bits()))
            .collect()
    }

    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }
}

#[cfg(test)]
mod tests;
