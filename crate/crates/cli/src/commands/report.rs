use super::fit::{select_rows, FitSummary};
use crate::config::Task;
use crate::manifest::{write_atomic, RunManifest};
use crate::tables::{
    read_results, render, ResultRow, DATA_SCALING_HEADER, REPETITION_HEADER, SCALING_CURVE_HEADER, SHAPE_SWEEP_HEADER,
    TASKS_HEADER,
};
use crate::Context;
use anyhow::{Context as _, Result};
use lsrm_core::scaling::{fit_power_law, loss_increase_vs_standard, predict_loss, LossKind};
use std::path::{Path, PathBuf};

const CURVE_POINTS: usize = 50;

fn loss_of(r: &ResultRow, kind: LossKind) -> f64 {
    match kind {
        LossKind::SingleEpoch => r.single_epoch_loss,
        LossKind::Converged => r.loss,
    }
}

/// Data lines of a table whose header must equal `header`.
fn body_of(path: &Path, header: &str) -> Result<Option<Vec<String>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        anyhow::bail!("{}: unexpected header", path.display());
    }
    Ok(Some(lines.filter(|l| !l.is_empty()).map(str::to_string).collect()))
}

fn scaling_curve(rows: &[ResultRow], fit: Option<&FitSummary>, kind: LossKind) -> Vec<String> {
    let fraction = fit.map(|f| f.fraction);
    let mut lines = Vec::new();
    if let Ok((_, sel)) = select_rows(rows, fraction) {
        let mut sel = sel;
        sel.sort_by_key(|r| r.n);
        lines.extend(sel.iter().map(|r| format!("observed\t{}\t{}", r.n, loss_of(r, kind))));
        if let (Some(f), Some(lo), Some(hi)) = (fit, sel.first(), sel.last()) {
            let (a, b) = ((lo.n as f64).ln(), (10.0 * hi.n as f64).ln());
            for i in 0..CURVE_POINTS {
                let n = (a + (b - a) * i as f64 / (CURVE_POINTS - 1) as f64).exp();
                lines.push(format!("predicted\t{}\t{}", n.round(), predict_loss(&f.fit, n)));
            }
        }
    }
    lines
}

fn data_scaling(rows: &[ResultRow], kind: LossKind) -> Vec<String> {
    let scale: Vec<&ResultRow> = rows.iter().filter(|r| r.ok() && r.group == "scale").collect();
    let mut fractions: Vec<f64> = scale.iter().map(|r| r.fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let mut lines = Vec::new();
    for f in fractions {
        let mut sel: Vec<&&ResultRow> = scale.iter().filter(|r| r.fraction == f).collect();
        sel.sort_by_key(|r| r.n);
        let pts: Vec<(f64, f64)> = sel.iter().map(|r| (r.n as f64, loss_of(r, kind))).collect();
        let consts = match fit_power_law(&pts) {
            Ok(fit) => format!("{}\t{}\t{}", fit.alpha, fit.e_n, fit.n0),
            Err(_) => "-\t-\t-".into(),
        };
        for r in sel {
            lines.push(format!("{f}\t{}\t{}\t{}\t{consts}", r.d, r.n, loss_of(r, kind)));
        }
    }
    lines
}

fn shape_sweep(rows: &[ResultRow], standard: (usize, usize)) -> Vec<String> {
    let shape: Vec<&ResultRow> = rows.iter().filter(|r| r.ok() && r.group == "shape").collect();
    let mut lines = Vec::new();
    for r in &shape {
        let base = shape
            .iter()
            .find(|s| (s.n_layer, s.d_model) == standard && s.seed == r.seed)
            .map(|s| s.loss);
        let pct = base.map_or("-".into(), |b| loss_increase_vs_standard(&[r.loss], b)[0].to_string());
        lines.push(format!("{}\t{}\t{}\t{}\t{}\t{}\t{pct}", r.n_layer, r.d_model, r.ratio, r.n, r.seed, r.loss));
    }
    lines
}

/// Collects sweep, fit and eval outputs into `<out>/report`. Missing inputs
/// produce header-only tables and a warning.
pub fn report(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let out = &ctx.out;
    let dir = out.join("report");
    let warn = |what: &Path| eprintln!("warning: {} not found; writing an empty table", what.display());

    let results_path = out.join("sweep").join("results.tsv");
    let rows = if results_path.exists() {
        read_results(&results_path)?
    } else {
        warn(&results_path);
        Vec::new()
    };
    let fit_path = out.join("fit").join("fit.json");
    let fit: Option<FitSummary> = if fit_path.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(&fit_path)?).with_context(|| format!("reading {}", fit_path.display()))?)
    } else {
        warn(&fit_path);
        None
    };
    let kind = fit.as_ref().map_or(cfg.fit.kind, |f| f.kind);
    let standard = cfg.sweep.shapes.as_ref().map_or((8, 128), |s| s.standard);

    let rep_path = out.join("sweep").join("repetition.tsv");
    let repetition = body_of(&rep_path, REPETITION_HEADER)?.unwrap_or_else(|| {
        warn(&rep_path);
        Vec::new()
    });
    let mut tasks = Vec::new();
    for t in [Task::Overall, Task::LongTail, Task::ColdStart, Task::MultiDomain] {
        let p = out.join("eval").join(format!("{}.tsv", t.name()));
        match body_of(&p, TASKS_HEADER)? {
            Some(lines) => tasks.extend(lines),
            None => warn(&p),
        }
    }

    let tables: [(&str, &str, Vec<String>); 5] = [
        ("scaling_curve.tsv", SCALING_CURVE_HEADER, scaling_curve(&rows, fit.as_ref(), kind)),
        ("data_scaling.tsv", DATA_SCALING_HEADER, data_scaling(&rows, kind)),
        ("repetition_curve.tsv", REPETITION_HEADER, repetition),
        ("shape_sweep.tsv", SHAPE_SWEEP_HEADER, shape_sweep(&rows, standard)),
        ("tasks.tsv", TASKS_HEADER, tasks),
    ];
    let mut artifacts: Vec<PathBuf> = Vec::new();
    for (name, header, lines) in tables {
        println!("{name}: {} rows", lines.len());
        write_atomic(&dir.join(name), render(header, lines).as_bytes())?;
        artifacts.push(name.into());
    }
    let mut run = RunManifest::new("report", cfg.digest(), None);
    run.artifacts = artifacts;
    run.finish(&dir)?;
    Ok(())
}
