//! Scaling-law machinery: power-law fits of loss against non-embedding
//! parameter count, extrapolation checks, model-shape plans and the sweep
//! runners that produce the points.

mod fit;
mod shape;
mod sweep;

pub use fit::{extrapolation_report, fit_points, fit_power_law, predict_loss, ExtrapolationReport, ExtrapolationRow, PowerLawFit};
pub use shape::{aspect_ratio, default_heads, feasible_sizes_near, loss_increase_vs_standard, shape_sweep_plan, ShapePlanEntry, SHAPE_TOLERANCE};
pub use sweep::{
    annotate_repetition, data_scaling_sweep, subsample_split, fit_by_data_size, repetition_sweep, run_cell, CellResult, DataFit,
    DataScalingResult, RepetitionCurve,
};

use crate::data::DataError;
use crate::model::ModelError;
use crate::train::TrainError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("need at least 4 distinct model sizes, found {found}")]
    TooFewPoints { found: usize },
    #[error("power-law fit did not converge: {0}")]
    NonConvergence(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no shape within 2% of N = {target}; nearest feasible sizes: {nearest:?}")]
    Infeasible { target: u64, nearest: Vec<u64> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = ScalingError> = std::result::Result<T, E>;

/// Which recorded loss a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Test loss after the first epoch.
    #[default]
    SingleEpoch,
    /// Test loss of the best-validation parameters.
    Converged,
}

/// One trained model: its size, data size and measured test losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    /// Non-embedding parameters.
    pub n: u64,
    /// Training interactions.
    pub d: u64,
    pub epochs: usize,
    pub loss: f64,
    pub single_epoch_loss: f64,
    pub wall_seconds: f64,
    pub run_id: String,
}

impl ScalingPoint {
    pub fn loss_of(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::SingleEpoch => self.single_epoch_loss,
            LossKind::Converged => self.loss,
        }
    }
}
