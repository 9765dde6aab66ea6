use super::{catalog_digest, load_dataset};
use crate::config::{require_path, ScorerKind, Task};
use crate::manifest::{write_atomic, RunManifest};
use crate::tables::render;
use crate::{ConfigError, Context};
use anyhow::Result;
use lsrm_core::data::store::PreparedDataset;
use lsrm_core::data::ItemIdx;
use lsrm_core::eval::{
    cold_start_eval, evaluate_leave_one_out, improvement_table, long_tail_eval, multi_domain_eval, robustness_eval,
    trajectory_eval, EvalReport, ModelScorer, PopularityScorer, RandomScorer, Scorer, TableScorer,
};
use lsrm_core::model::Lsrm;
use lsrm_core::train::load_checkpoint;
use lsrm_core::Parallelism;
use std::path::{Path, PathBuf};

use super::train::{TrainSummary, CHECKPOINT};

/// Loads the best parameters of a checkpoint and checks that it was trained
/// on this dataset's catalog.
fn load_model(path: &Path, ds: &PreparedDataset, digest: &str) -> Result<Lsrm> {
    require_path(path, "checkpoint")?;
    let (st, _) = load_checkpoint(path, None).map_err(|e| ConfigError(e.to_string()))?;
    let shape = *st.model.shape();
    let n_items = ds.split.catalog.len();
    if shape.n_items != n_items {
        return Err(ConfigError(format!(
            "{} covers {} items but the dataset has {n_items}",
            path.display(),
            shape.n_items
        ))
        .into());
    }
    let summary = path.with_file_name("summary.json");
    if summary.exists() {
        let s: TrainSummary = serde_json::from_str(&std::fs::read_to_string(&summary)?)?;
        if s.catalog_digest != digest {
            return Err(ConfigError(format!("{} was trained on a different item catalog", path.display())).into());
        }
    }
    Ok(match st.best_params {
        Some(best) => Lsrm::from_params(shape, best)?,
        None => st.model,
    })
}

/// Sequences used for the trajectory task: full sequences of test users.
fn trajectory_sequences(ds: &PreparedDataset) -> Vec<Vec<ItemIdx>> {
    ds.split.users.iter().filter_map(|u| u.full_sequence()).collect()
}

/// Scores the true next item 1 for every history the tasks will ask about.
fn oracle(ds: &PreparedDataset, lengths: &[usize]) -> TableScorer {
    let mut t = TableScorer::new(ds.split.catalog.len());
    for u in &ds.cold_start {
        if let Some((last, hist)) = u.items.split_last() {
            for &k in lengths {
                t.insert_target(&hist[hist.len().saturating_sub(k)..], *last);
            }
        }
    }
    for seq in trajectory_sequences(ds) {
        for j in 1..seq.len() {
            t.insert_target(&seq[..j], seq[j]);
        }
    }
    t
}

fn run_task(task: Task, scorer: &dyn Scorer, ds: &PreparedDataset, ctx: &Context) -> Result<String> {
    let e = &ctx.config.eval;
    let opts = &e.options;
    let seed = ctx.config.seed;
    let mode = Parallelism::Parallel;
    Ok(match task {
        Task::Overall => evaluate_leave_one_out(scorer, &ds.split, opts, mode)?.to_tsv(seed),
        Task::LongTail => long_tail_eval(scorer, &ds.split, &ds.popularity, opts, mode)?.to_tsv(seed),
        Task::ColdStart => cold_start_eval(scorer, &ds.cold_start, &e.cold_start_lengths, opts, mode)?.to_tsv(seed),
        Task::MultiDomain => multi_domain_eval(scorer, &ds.split, opts, mode)?.to_tsv(seed),
        Task::Robustness => {
            robustness_eval(scorer, &ds.split, &e.perturb_modes, &e.perturb_probs, &e.perturb_seeds, opts, mode)?.to_tsv()
        }
        Task::Trajectory => {
            trajectory_eval(scorer, &trajectory_sequences(ds), e.trajectory_k, e.exclude_seen_in_rollout, mode)?.to_tsv()
        }
    })
}

fn parse_tasks(names: Option<Vec<String>>, default: &[Task]) -> Result<Vec<Task>> {
    let Some(names) = names else {
        return Ok(default.to_vec());
    };
    names
        .iter()
        .map(|n| {
            Task::parse(n.trim()).ok_or_else(|| {
                let known: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
                ConfigError(format!("unknown task {n:?}; expected one of {}", known.join(", "))).into()
            })
        })
        .collect()
}

fn parse_scorer(name: Option<String>, default: ScorerKind) -> Result<ScorerKind> {
    match name.as_deref() {
        None => Ok(default),
        Some("model") => Ok(ScorerKind::Model),
        Some("popularity") => Ok(ScorerKind::Popularity),
        Some("random") => Ok(ScorerKind::Random),
        Some("oracle") => Ok(ScorerKind::Oracle),
        Some(s) => Err(ConfigError(format!("unknown scorer {s:?}; expected model, popularity, random or oracle")).into()),
    }
}

/// Runs the selected tasks and writes one table per task to `<out>/eval`.
pub fn eval(
    ctx: &Context,
    checkpoint: Option<PathBuf>,
    tasks: Option<Vec<String>>,
    scorer: Option<String>,
    baseline: Option<PathBuf>,
) -> Result<()> {
    let cfg = &ctx.config;
    let tasks = parse_tasks(tasks, &cfg.eval.tasks)?;
    let kind = parse_scorer(scorer, cfg.eval.scorer)?;
    let (ds, dman) = load_dataset(ctx)?;
    let digest = catalog_digest(&dman)?;
    let checkpoint = checkpoint.unwrap_or_else(|| ctx.out.join("train").join(CHECKPOINT));
    let n_items = ds.split.catalog.len();

    let model;
    let table;
    let scorer: Box<dyn Scorer + '_> = match kind {
        ScorerKind::Model => {
            model = load_model(&checkpoint, &ds, &digest)?;
            Box::new(ModelScorer { model: &model })
        }
        ScorerKind::Popularity => Box::new(PopularityScorer { index: &ds.popularity }),
        ScorerKind::Random => Box::new(RandomScorer { n_items, seed: cfg.seed }),
        ScorerKind::Oracle => {
            table = oracle(&ds, &cfg.eval.cold_start_lengths);
            Box::new(table)
        }
    };
    let baseline_model = baseline.map(|p| load_model(&p, &ds, &digest)).transpose()?;

    let dir = ctx.out.join("eval");
    let mut artifacts: Vec<PathBuf> = Vec::new();
    for &task in &tasks {
        let tsv = run_task(task, scorer.as_ref(), &ds, ctx)?;
        let name = format!("{}.tsv", task.name());
        write_atomic(&dir.join(&name), tsv.as_bytes())?;
        println!("{name}:\n{tsv}");
        artifacts.push(name.into());
    }
    if let Some(b) = &baseline_model {
        let opts = &cfg.eval.options;
        let mine: EvalReport = multi_domain_eval(scorer.as_ref(), &ds.split, opts, Parallelism::Parallel)?;
        let theirs = multi_domain_eval(&ModelScorer { model: b }, &ds.split, opts, Parallelism::Parallel)?;
        let metric = format!("NDCG@{}", opts.focus_n);
        let lines = improvement_table(&mine, &theirs, &metric)
            .into_iter()
            .map(|(cell, pct)| format!("{cell}\t{metric}\t{}", pct.map_or("-".into(), |p| p.to_string())));
        write_atomic(&dir.join("multi_domain_gain.tsv"), render("cell\tmetric\tgain_pct", lines).as_bytes())?;
        artifacts.push("multi_domain_gain.tsv".into());
    }
    let mut run = RunManifest::new("eval", cfg.digest(), Some(dman.digest.clone()));
    run.artifacts = artifacts;
    run.finish(&dir)?;
    Ok(())
}
