//! Run configuration, read from TOML. Every field has a default; relative
//! paths are resolved against the config file's directory.

use anyhow::Result;
use lsrm_core::data::synthetic::SyntheticConfig;
use lsrm_core::data::PerturbMode;
use lsrm_core::eval::EvalOptions;
use lsrm_core::model::ModelShape;
use lsrm_core::scaling::LossKind;
use lsrm_core::train::TrainPlan;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub synthetic: Option<SyntheticConfig>,
    pub model: ModelConfig,
    pub train: TrainPlan,
    pub sweep: SweepConfig,
    pub fit: FitConfig,
    pub eval: EvalConfig,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Interaction log for `prepare`; ignored when `[synthetic]` is set.
    pub raw: Option<PathBuf>,
    /// Prepared dataset directory; defaults to `<out>/dataset`.
    pub dataset: Option<PathBuf>,
    pub k_core: usize,
    pub cold_start_fraction: f64,
    pub groups: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            raw: None,
            dataset: None,
            k_core: 30,
            cold_start_fraction: 0.2,
            groups: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layer: usize,
    pub d_model: usize,
    pub n_head: usize,
    /// Defaults to `4·d_model`.
    pub d_ff: Option<usize>,
    pub s: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layer: 2,
            d_model: 64,
            n_head: 2,
            d_ff: None,
            s: 50,
        }
    }
}

impl ModelConfig {
    pub fn shape(&self, n_items: usize) -> Result<ModelShape> {
        let shape = ModelShape {
            n_layer: self.n_layer,
            d_model: self.d_model,
            n_head: self.n_head,
            d_ff: self.d_ff.unwrap_or(4 * self.d_model),
            s: self.s,
            n_items: n_items.max(1),
        };
        shape.validate().map_err(|e| ConfigError(format!("[model]: {e}")))?;
        Ok(shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeSweepConfig {
    pub n_target: u64,
    pub ratios: Vec<f64>,
    /// `(n_layer, d_model)` of the reference shape.
    pub standard: (usize, usize),
}

impl Default for ShapeSweepConfig {
    fn default() -> Self {
        Self {
            n_target: 1_572_864,
            ratios: vec![2.0, 16.0, 128.0],
            standard: (8, 128),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `(n_layer, d_model)` pairs; heads are `max(1, d_model/32)`.
    pub scales: Vec<(usize, usize)>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub shapes: Option<ShapeSweepConfig>,
    /// Scales trained for `repetition_epochs` without early stopping.
    pub repetition: Vec<(usize, usize)>,
    pub repetition_epochs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scales: vec![(2, 64), (4, 128), (8, 128), (12, 256)],
            fractions: vec![1.0],
            seeds: vec![0],
            shapes: None,
            repetition: Vec::new(),
            repetition_epochs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub kind: LossKind,
    /// Data fraction to fit; defaults to the largest in the table.
    pub fraction: Option<f64>,
    /// Largest Ns withheld for extrapolation.
    pub holdout_top: usize,
    pub bound: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::SingleEpoch,
            fraction: None,
            holdout_top: 0,
            bound: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Overall,
    LongTail,
    ColdStart,
    MultiDomain,
    Robustness,
    Trajectory,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Overall,
        Task::LongTail,
        Task::ColdStart,
        Task::MultiDomain,
        Task::Robustness,
        Task::Trajectory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Overall => "overall",
            Task::LongTail => "long_tail",
            Task::ColdStart => "cold_start",
            Task::MultiDomain => "multi_domain",
            Task::Robustness => "robustness",
            Task::Trajectory => "trajectory",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Model,
    Popularity,
    Random,
    /// Scores the true next item 1 and everything else 0.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tasks: Vec<Task>,
    pub scorer: ScorerKind,
    pub options: EvalOptions,
    pub cold_start_lengths: Vec<usize>,
    pub perturb_modes: Vec<PerturbMode>,
    pub perturb_probs: Vec<f64>,
    pub perturb_seeds: Vec<u64>,
    pub trajectory_k: usize,
    pub exclude_seen_in_rollout: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tasks: vec![Task::Overall],
            scorer: ScorerKind::Model,
            options: EvalOptions::default(),
            cold_start_lengths: vec![5, 10, 20, 50],
            perturb_modes: vec![PerturbMode::Remove, PerturbMode::Replace],
            perturb_probs: vec![0.0, 0.1, 0.2],
            perturb_seeds: vec![0, 1, 2, 3, 4],
            trajectory_k: 5,
            exclude_seen_in_rollout: false,
        }
    }
}

impl RunConfig {
    /// Reads `path` and makes relative paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.out);
        fix(&mut cfg.data.raw);
        fix(&mut cfg.data.dataset);
        Ok(cfg)
    }

    /// Checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| ConfigError(format!("[train]: {e}")))?;
        self.model.shape(1)?;
        let d = &self.data;
        if !(0.0..1.0).contains(&d.cold_start_fraction) || d.groups == 0 {
            return Err(ConfigError("[data]: need 0 <= cold_start_fraction < 1 and groups >= 1".into()).into());
        }
        if self.sweep.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(ConfigError("[sweep]: fractions must lie in (0, 1]".into()).into());
        }
        if self.fit.bound <= 0.0 {
            return Err(ConfigError("[fit]: bound must be positive".into()).into());
        }
        Ok(())
    }

    /// sha256 of the resolved configuration's JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .unwrap_or_else(|| PathBuf::from("lsrm-out"))
    }

    pub fn dataset_dir(&self, out: &Path) -> PathBuf {
        self.data.dataset.clone().unwrap_or_else(|| out.join("dataset"))
    }
}

/// Existing path or a configuration error naming it.
pub fn require_path(p: &Path, what: &str) -> Result<()> {
    if !p.exists() {
        return Err(ConfigError(format!("{what} not found: {}", p.display())).into());
    }
    Ok(())
}
