use crate::config::require_path;
use crate::manifest::{write_atomic, RunManifest};
use crate::tables::{read_results, render, ResultRow, EXTRAPOLATION_HEADER, POINTS_HEADER};
use crate::{ConfigError, Context};
use anyhow::Result;
use lsrm_core::scaling::{extrapolation_report, fit_power_law, predict_loss, ExtrapolationReport, LossKind, PowerLawFit};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Written to `fit/fit.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitSummary {
    pub kind: LossKind,
    pub fraction: f64,
    pub points: usize,
    pub fit: PowerLawFit,
    pub extrapolation: Option<ExtrapolationReport>,
}

fn loss_of(r: &ResultRow, kind: LossKind) -> f64 {
    match kind {
        LossKind::SingleEpoch => r.single_epoch_loss,
        LossKind::Converged => r.loss,
    }
}

/// Successful `scale` rows at `fraction` (default: the largest present).
pub fn select_rows(rows: &[ResultRow], fraction: Option<f64>) -> Result<(f64, Vec<&ResultRow>)> {
    let ok: Vec<&ResultRow> = rows.iter().filter(|r| r.ok() && r.group == "scale").collect();
    let fraction = match fraction {
        Some(f) => f,
        None => ok
            .iter()
            .map(|r| r.fraction)
            .max_by(f64::total_cmp)
            .ok_or_else(|| ConfigError("results table has no successful scale rows".into()))?,
    };
    Ok((fraction, ok.into_iter().filter(|r| r.fraction == fraction).collect()))
}

/// Fits `L(N) = E + (N0/N)^α` to a sweep table and, with `holdout_top`,
/// checks the extrapolation to the withheld sizes.
pub fn fit(ctx: &Context, table: Option<PathBuf>, holdout_top: Option<usize>) -> Result<()> {
    let cfg = &ctx.config.fit;
    let table = table.unwrap_or_else(|| ctx.out.join("sweep").join("results.tsv"));
    require_path(&table, "results table")?;
    let rows = read_results(&table).map_err(|e| ConfigError(format!("{e:#}")))?;
    let (fraction, rows) = select_rows(&rows, cfg.fraction)?;
    let mut points: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, loss_of(r, cfg.kind))).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sizes: Vec<f64> = points.iter().map(|p| p.0).collect();
    sizes.dedup();
    let k = holdout_top.unwrap_or(cfg.holdout_top);
    if sizes.len() < 4 + k {
        return Err(ConfigError(format!(
            "need at least {} distinct model sizes at fraction {fraction} ({} to fit, {k} held out), found {}",
            4 + k,
            4,
            sizes.len()
        ))
        .into());
    }
    let cut = sizes[sizes.len() - k..].first().copied().unwrap_or(f64::INFINITY);
    let (train, held): (Vec<(f64, f64)>, Vec<(f64, f64)>) = points.iter().partition(|p| p.0 < cut);
    let fit = fit_power_law(&train)?;
    let extrapolation = if held.is_empty() {
        None
    } else {
        Some(extrapolation_report(&fit, &held, cfg.bound)?)
    };

    let dir = ctx.out.join("fit");
    let lines = train
        .iter()
        .map(|&(n, l)| {
            let p = predict_loss(&fit, n);
            format!("{n}\t{l}\t{p}\t{}", p.ln() - l.ln())
        })
        .collect::<Vec<_>>();
    write_atomic(&dir.join("points.tsv"), render(POINTS_HEADER, lines).as_bytes())?;
    let ext_lines = extrapolation.iter().flat_map(|r| {
        r.rows
            .iter()
            .map(|x| format!("{}\t{}\t{}\t{}\t{}", x.n, x.actual, x.predicted, x.rel_error, x.within_bound))
    });
    write_atomic(&dir.join("extrapolation.tsv"), render(EXTRAPOLATION_HEADER, ext_lines).as_bytes())?;
    let summary = FitSummary {
        kind: cfg.kind,
        fraction,
        points: train.len(),
        fit,
        extrapolation,
    };
    write_atomic(&dir.join("fit.json"), (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    let mut run = RunManifest::new("fit", ctx.config.digest(), None);
    run.artifacts = vec!["fit.json".into(), "points.tsv".into(), "extrapolation.tsv".into()];
    run.finish(&dir)?;

    let f = &summary.fit;
    println!(
        "E_N = {:.10e}  N0 = {:.10e}  alpha = {:.10e}  rss = {:.4e}  ({} points{})",
        f.e_n,
        f.n0,
        f.alpha,
        f.rss,
        summary.points,
        if f.degenerate { ", degenerate" } else { "" }
    );
    if let Some(r) = &summary.extrapolation {
        for x in &r.rows {
            println!(
                "N = {:.4e}: actual {:.5} predicted {:.5} rel error {:.4} {}",
                x.n,
                x.actual,
                x.predicted,
                x.rel_error,
                if x.within_bound { "ok" } else { "outside bound" }
            );
        }
    }
    Ok(())
}
