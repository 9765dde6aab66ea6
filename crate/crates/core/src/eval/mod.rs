//! Ranking metrics and the evaluators for next-item prediction, long-tail
//! items, cold-start users, multiple domains, perturbed histories and
//! multi-step trajectories.

mod metrics;
mod report;
mod scorer;
mod tasks;
mod trajectory;

pub use metrics::{coverage_at_n, hr_at_n, ndcg_at_n, rank_items, rank_of, tr_at_k, RankedList};
pub use report::{improvement_table, EvalCell, EvalReport};
pub use scorer::{ModelScorer, PopularityScorer, RandomScorer, Scorer, TableScorer};
pub use tasks::{
    cold_start_eval, evaluate_cases, evaluate_leave_one_out, long_tail_eval, multi_domain_eval, robustness_eval,
    Case, CaseResult, EvalOptions, RobustnessRow, RobustnessTable,
};
pub use trajectory::{trajectory_eval, trajectory_rollout, TrajectoryReport, TrajectoryRollout};

use crate::data::DataError;
use crate::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no users to evaluate: {0}")]
    NoUsers(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("scorer returned {found} scores, expected {expected}")]
    ScoreLength { found: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests;
