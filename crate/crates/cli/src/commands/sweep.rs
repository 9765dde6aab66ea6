use super::load_dataset;
use crate::config::RunConfig;
use crate::manifest::{write_atomic, RunManifest};
use crate::tables::{render, ResultRow, REPETITION_HEADER, RESULTS_HEADER};
use crate::{ConfigError, Context};
use anyhow::{bail, Result};
use lsrm_core::data::SplitDataset;
use lsrm_core::exec::map_ordered;
use lsrm_core::model::{Lsrm, ModelShape};
use lsrm_core::scaling::{aspect_ratio, default_heads, repetition_sweep, run_cell, shape_sweep_plan, subsample_split, RepetitionCurve};
use lsrm_core::train::TrainPlan;
use lsrm_core::Parallelism;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

const DONE: &str = "DONE";

#[derive(Debug, Clone)]
struct Cell {
    id: String,
    group: &'static str,
    shape: ModelShape,
    fraction: f64,
    seed: u64,
}

/// Everything that determines a cell's result.
#[derive(Serialize)]
struct CellKey<'a> {
    shape: &'a ModelShape,
    plan: &'a TrainPlan,
    fraction: f64,
    seed: u64,
    dataset: &'a str,
    repetition_epochs: Option<usize>,
}

fn key_of(k: &CellKey) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(k).expect("key serializes")))
}

#[derive(Serialize, Deserialize)]
struct CellRecord<T> {
    key: String,
    result: T,
}

fn shape_of(l: usize, d: usize, s: usize, n_items: usize) -> Result<ModelShape> {
    ModelShape::standard(l, d, default_heads(d), s, n_items).map_err(|e| ConfigError(format!("[sweep]: {e}")).into())
}

fn plan_cells(cfg: &RunConfig, n_items: usize) -> Result<Vec<Cell>> {
    let s = cfg.model.s;
    let sw = &cfg.sweep;
    if sw.seeds.is_empty() {
        return Err(ConfigError("[sweep]: seeds must not be empty".into()).into());
    }
    let mut fractions = sw.fractions.clone();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let mut cells = Vec::new();
    for &f in &fractions {
        for &(l, d) in &sw.scales {
            for &seed in &sw.seeds {
                cells.push(Cell {
                    id: format!("scale-L{l}-d{d}-f{f}-s{seed}"),
                    group: "scale",
                    shape: shape_of(l, d, s, n_items)?,
                    fraction: f,
                    seed,
                });
            }
        }
    }
    if let Some(sh) = &sw.shapes {
        let plan = shape_sweep_plan(sh.n_target, &sh.ratios, s, n_items).map_err(|e| ConfigError(format!("[sweep.shapes]: {e}")))?;
        let mut dims: Vec<(usize, usize)> = plan.iter().map(|e| (e.shape.n_layer, e.shape.d_model)).collect();
        if !dims.contains(&sh.standard) {
            dims.push(sh.standard);
        }
        for (l, d) in dims {
            for &seed in &sw.seeds {
                cells.push(Cell {
                    id: format!("shape-L{l}-d{d}-s{seed}"),
                    group: "shape",
                    shape: shape_of(l, d, s, n_items)?,
                    fraction: 1.0,
                    seed,
                });
            }
        }
    }
    Ok(cells)
}

fn read_record<T: for<'de> Deserialize<'de>>(dir: &Path, key: &str) -> Option<T> {
    if !dir.join(DONE).exists() {
        return None;
    }
    let text = std::fs::read_to_string(dir.join("result.json")).ok()?;
    let rec: CellRecord<T> = serde_json::from_str(&text).ok()?;
    (rec.key == key).then_some(rec.result)
}

fn write_record<T: Serialize>(dir: &Path, key: String, result: &T) -> Result<()> {
    let rec = CellRecord { key, result };
    write_atomic(&dir.join("result.json"), (serde_json::to_string_pretty(&rec)? + "\n").as_bytes())?;
    write_atomic(&dir.join(DONE), b"")?;
    Ok(())
}

fn train_cell(cell: &Cell, subset: &SplitDataset, full: &SplitDataset, plan: &TrainPlan) -> Result<ResultRow> {
    let mut plan = plan.clone();
    plan.seed = cell.seed;
    let r = run_cell(cell.shape, subset, full, &plan, cell.seed, &cell.id, Parallelism::Parallel)?;
    Ok(ResultRow {
        cell: cell.id.clone(),
        group: cell.group.into(),
        n_layer: cell.shape.n_layer,
        d_model: cell.shape.d_model,
        n_head: cell.shape.n_head,
        ratio: aspect_ratio(&cell.shape),
        fraction: cell.fraction,
        seed: cell.seed,
        n: r.point.n,
        d: r.point.d,
        epochs: r.point.epochs,
        loss: r.point.loss,
        single_epoch_loss: r.point.single_epoch_loss,
        wall_seconds: r.point.wall_seconds,
        status: "ok".into(),
    })
}

/// Trains every cell not already finished with the same inputs, then
/// rewrites `sweep/results.tsv` (and `sweep/repetition.tsv`).
pub fn sweep(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let (ds, dman) = load_dataset(ctx)?;
    let n_items = ds.split.catalog.len();
    let cells = plan_cells(cfg, n_items)?;
    let dir = ctx.out.join("sweep");
    let cell_dir = |id: &str| -> PathBuf { dir.join("cells").join(id) };
    let mut fractions: Vec<f64> = cells.iter().map(|c| c.fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let subsets = fractions
        .iter()
        .map(|&f| subsample_split(&ds.split, f, cfg.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let subset_of = |f: f64| &subsets[fractions.iter().position(|&x| x == f).expect("planned fraction")];

    let keys: Vec<String> = cells
        .iter()
        .map(|c| {
            let mut plan = cfg.train.clone();
            plan.seed = c.seed;
            key_of(&CellKey {
                shape: &c.shape,
                plan: &plan,
                fraction: c.fraction,
                seed: c.seed,
                dataset: &dman.digest,
                repetition_epochs: None,
            })
        })
        .collect();
    let jobs: Vec<usize> = (0..cells.len()).collect();
    let outcomes = map_ordered(&jobs, Parallelism::Parallel, |_, &i| -> (ResultRow, bool) {
        let c = &cells[i];
        let cd = cell_dir(&c.id);
        if let Some(row) = read_record::<ResultRow>(&cd, &keys[i]) {
            return (row, false);
        }
        eprintln!("training cell {}", c.id);
        let row = train_cell(c, subset_of(c.fraction), &ds.split, &cfg.train).and_then(|row| {
            write_record(&cd, keys[i].clone(), &row)?;
            Ok(row)
        });
        let row = row.unwrap_or_else(|e| ResultRow {
            cell: c.id.clone(),
            group: c.group.into(),
            n_layer: c.shape.n_layer,
            d_model: c.shape.d_model,
            n_head: c.shape.n_head,
            ratio: aspect_ratio(&c.shape),
            fraction: c.fraction,
            seed: c.seed,
            n: 0,
            d: 0,
            epochs: 0,
            loss: f64::NAN,
            single_epoch_loss: f64::NAN,
            wall_seconds: 0.0,
            status: format!("failed: {e:#}"),
        });
        (row, true)
    });
    let trained = outcomes.iter().filter(|o| o.1).count();
    let failed: Vec<&ResultRow> = outcomes.iter().map(|o| &o.0).filter(|r| !r.ok()).collect();
    let table = render(RESULTS_HEADER, outcomes.iter().map(|o| o.0.to_line()));
    write_atomic(&dir.join("results.tsv"), table.as_bytes())?;
    let mut artifacts: Vec<PathBuf> = vec!["results.tsv".into()];

    if !cfg.sweep.repetition.is_empty() {
        let mut rows = Vec::new();
        for &(l, d) in &cfg.sweep.repetition {
            for &seed in &cfg.sweep.seeds {
                let shape = shape_of(l, d, cfg.model.s, n_items)?;
                let mut plan = cfg.train.clone();
                plan.seed = seed;
                let key = key_of(&CellKey {
                    shape: &shape,
                    plan: &plan,
                    fraction: 1.0,
                    seed,
                    dataset: &dman.digest,
                    repetition_epochs: Some(cfg.sweep.repetition_epochs),
                });
                let cd = cell_dir(&format!("repetition-L{l}-d{d}-s{seed}"));
                let curve: RepetitionCurve = match read_record(&cd, &key) {
                    Some(c) => c,
                    None => {
                        eprintln!("repetition run L{l} d{d} seed {seed}");
                        let model = Lsrm::init(shape, seed)?;
                        let c = repetition_sweep(model, &ds.split, &plan, cfg.sweep.repetition_epochs, Parallelism::Parallel)?;
                        write_record(&cd, key, &c)?;
                        c
                    }
                };
                for (e, v) in curve.valid_losses.iter().enumerate() {
                    rows.push(format!(
                        "{l}\t{d}\t{seed}\t{}\t{v}\t{}\t{}",
                        e + 1,
                        curve.knee.map_or("-".into(), |k| k.to_string()),
                        curve.overfit
                    ));
                }
            }
        }
        write_atomic(&dir.join("repetition.tsv"), render(REPETITION_HEADER, rows).as_bytes())?;
        artifacts.push("repetition.tsv".into());
    }
    let mut run = RunManifest::new("sweep", cfg.digest(), Some(dman.digest.clone()));
    run.artifacts = artifacts;
    run.finish(&dir)?;
    println!(
        "{} cells: {} trained, {} reused, {} failed",
        cells.len(),
        trained,
        cells.len() - trained,
        failed.len()
    );
    if !failed.is_empty() {
        bail!(
            "{} sweep cell(s) failed; first: {} ({})",
            failed.len(),
            failed[0].cell,
            failed[0].status
        );
    }
    Ok(())
}
