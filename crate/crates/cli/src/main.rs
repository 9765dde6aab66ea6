//! `lsrm`: prepare datasets, train, sweep, fit scaling laws, evaluate and
//! export plot-ready tables.
//!
//! Exit codes: 0 on success, 1 for runtime failures, 2 for configuration
//! or validation errors.

mod commands;
mod config;
mod manifest;
mod tables;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Raised for problems with the configuration or command-line inputs.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

const TABLES_HELP: &str = "\
Tables are UTF-8, tab-delimited, with a header line:
  sweep/results.tsv        cell group n_layer d_model n_head ratio fraction seed n d epochs loss single_epoch_loss wall_seconds status
  sweep/repetition.tsv     n_layer d_model seed epoch valid_loss knee overfit
  fit/points.tsv           n loss predicted residual
  fit/extrapolation.tsv    n actual predicted rel_error within_bound
  eval/<task>.tsv          task cell metric value users seed
  eval/robustness.tsv      mode p degradation_pct std_error seeds
  eval/trajectory.tsv      k tr decrease_ratio users
  eval/multi_domain_gain.tsv cell metric gain_pct
  report/scaling_curve.tsv kind n loss
  report/data_scaling.tsv  fraction d n loss alpha e_n n0
  report/repetition_curve.tsv n_layer d_model seed epoch valid_loss knee overfit
  report/shape_sweep.tsv   n_layer d_model ratio n seed loss increase_pct
  report/tasks.tsv         task cell metric value users seed";

#[derive(Parser, Debug)]
#[command(name = "lsrm", version, about = "Scaling experiments for transformer sequential recommenders", after_help = TABLES_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel work and sweep cells.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output root; falls back to the config's `out`, then `./lsrm-out`.
    #[arg(long, global = true, env = "LSRM_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest, filter and split interactions into `<out>/dataset`.
    Prepare,
    /// Train one model on the prepared dataset into `<out>/train`.
    Train {
        /// Continue from `<out>/train/checkpoint.bin`.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in this invocation (checkpoint kept).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Train every sweep cell into `<out>/sweep`, skipping finished cells.
    Sweep,
    /// Fit the scaling law to a sweep table into `<out>/fit`.
    Fit {
        /// Results table; defaults to `<out>/sweep/results.tsv`.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Withhold the k largest model sizes and extrapolate to them.
        #[arg(long)]
        holdout_top: Option<usize>,
    },
    /// Run evaluation tasks into `<out>/eval`.
    Eval {
        /// Checkpoint; defaults to `<out>/train/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subset of overall, long_tail, cold_start,
        /// multi_domain, robustness, trajectory.
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
        /// model, popularity, random or oracle.
        #[arg(long)]
        scorer: Option<String>,
        /// Baseline checkpoint for the multi-domain percentage table.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Collect plot-ready tables into `<out>/report`.
    Report,
}

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

fn load(global: &Global) -> anyhow::Result<Context> {
    let mut config = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        config.seed = s;
    }
    config.train.seed = config.seed;
    config.validate()?;
    if let Some(w) = global.workers {
        if w == 0 {
            return Err(ConfigError("--workers must be positive".into()).into());
        }
        lsrm_core::exec::set_workers(w);
    }
    let out = config.out_dir(global.out.as_deref());
    Ok(Context { config, out })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = load(&cli.global)?;
    match cli.command {
        Command::Prepare => commands::prepare(&ctx),
        Command::Train { resume, stop_after } => commands::train(&ctx, resume, stop_after),
        Command::Sweep => commands::sweep(&ctx),
        Command::Fit { table, holdout_top } => commands::fit(&ctx, table, holdout_top),
        Command::Eval {
            checkpoint,
            tasks,
            scorer,
            baseline,
        } => commands::eval(&ctx, checkpoint, tasks, scorer, baseline),
        Command::Report => commands::report(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
