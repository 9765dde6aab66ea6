//! A desk-scale laboratory for large sequential recommendation models.
//!
//! The crate covers the full experimental loop:
//!
//! * [`data`]: ingestion, k-core filtering, chronological sequences,
//!   leave-one-out splits and the derived datasets used by the challenge tasks;
//! * [`tensor`]: dense `f64` tensors with a reverse-mode autodiff tape;
//! * [`model`]: the decoder-only transformer recommender and its parameter
//!   accounting;
//! * [`train`]: two-stage (Adam, then SGD) optimisation with layer-wise
//!   dropout, cosine learning rate, checkpoints;
//! * [`scaling`]: power-law fitting, extrapolation and model-shape sweeps;
//! * [`eval`]: ranking metrics and the challenge-task evaluators.

pub mod data;
pub mod eval;
pub mod exec;
pub mod gradcheck;
pub mod model;
pub mod rng;
pub mod scaling;
pub mod tensor;
pub mod train;

pub use exec::Parallelism;
pub use tensor::{Tensor, TensorError};
