use super::{fit_points, LossKind, PowerLawFit, Result, ScalingError, ScalingPoint};
use crate::data::{subsample_by_length, ItemIdx, SplitDataset};
use crate::exec::{map_ordered, Parallelism};
use crate::model::{count_non_embedding_params, Lsrm, ModelShape};
use crate::train::{evaluate_loss, Ablation, TrainLog, TrainPlan, Trainer};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// One trained cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub point: ScalingPoint,
    pub log: TrainLog,
}

fn test_pairs(split: &SplitDataset) -> Vec<(Vec<ItemIdx>, ItemIdx)> {
    split
        .test_users()
        .map(|u| (u.test_history(), u.test.expect("test user")))
        .collect()
}

/// Trains `shape` on `train` and measures test loss on `eval`, both after
/// the first epoch and for the best-validation parameters.
pub fn run_cell(
    shape: ModelShape,
    train: &SplitDataset,
    eval: &SplitDataset,
    plan: &TrainPlan,
    init_seed: u64,
    run_id: &str,
    mode: Parallelism,
) -> Result<CellResult> {
    let started = Instant::now();
    let pairs = test_pairs(eval);
    if pairs.is_empty() {
        return Err(ScalingError::InvalidArgument("evaluation split has no test users".into()));
    }
    let borrowed: Vec<(&[ItemIdx], ItemIdx)> = pairs.iter().map(|(h, t)| (h.as_slice(), *t)).collect();
    let model = Lsrm::init(shape, init_seed)?;
    let trainer = Trainer::new(plan.clone(), train, shape.n_layer, mode)?;
    let st = trainer.start(model)?;
    let mut first = None;
    let outcome = trainer.run(st, |st| {
        if first.is_none() {
            first = Some(evaluate_loss(&st.model, &borrowed, plan.eval_batch, mode)?);
        }
        Ok(())
    })?;
    let loss = evaluate_loss(&outcome.best, &borrowed, plan.eval_batch, mode)?;
    Ok(CellResult {
        point: ScalingPoint {
            n: count_non_embedding_params(&shape),
            d: train.train_interactions() as u64,
            epochs: outcome.log.epochs.len(),
            loss,
            single_epoch_loss: first.expect("at least one epoch"),
            wall_seconds: started.elapsed().as_secs_f64(),
            run_id: run_id.to_string(),
        },
        log: outcome.log,
    })
}

/// Whole users drawn until their training interactions reach `fraction`
/// of the total; `fraction = 1` keeps the split unchanged.
pub fn subsample_split(split: &SplitDataset, fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ScalingError::InvalidArgument(format!("fraction {fraction} outside (0, 1]")));
    }
    if fraction >= 1.0 {
        return Ok(split.clone());
    }
    let lengths: Vec<usize> = split.users.iter().map(|u| u.train.len()).collect();
    let target = ((fraction * split.train_interactions() as f64).round() as i64).max(1);
    Ok(split.select_users(&subsample_by_length(&lengths, target, seed)?))
}

/// Fit for one data size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFit {
    pub d: u64,
    pub fraction: f64,
    pub fit: PowerLawFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataScalingResult {
    /// Sorted by data size, then by N.
    pub points: Vec<ScalingPoint>,
    pub fits: Vec<DataFit>,
    pub kind: LossKind,
}

/// Groups points by data size (ascending) and fits each group.
/// `fractions` labels the groups in the same order.
pub fn fit_by_data_size(points: &[ScalingPoint], fractions: &[f64], kind: LossKind) -> Result<Vec<DataFit>> {
    let mut sizes: Vec<u64> = points.iter().map(|p| p.d).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() != fractions.len() {
        return Err(ScalingError::InvalidArgument(format!(
            "{} data sizes but {} fractions",
            sizes.len(),
            fractions.len()
        )));
    }
    sizes
        .iter()
        .zip(fractions)
        .map(|(&d, &fraction)| {
            let group: Vec<ScalingPoint> = points.iter().filter(|p| p.d == d).cloned().collect();
            Ok(DataFit {
                d,
                fraction,
                fit: fit_points(&group, kind)?,
            })
        })
        .collect()
}

/// Trains every `(shape, fraction)` cell and fits one power law per
/// fraction. Training users are subsampled to the fraction of training
/// interactions; test loss always uses the full split.
pub fn data_scaling_sweep(
    shapes: &[ModelShape],
    fractions: &[f64],
    split: &SplitDataset,
    plan: &TrainPlan,
    kind: LossKind,
    mode: Parallelism,
) -> Result<DataScalingResult> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(ScalingError::InvalidArgument("fractions must lie in (0, 1]".into()));
    }
    let mut fr = fractions.to_vec();
    fr.sort_by(f64::total_cmp);
    fr.dedup();
    let subsets = fr
        .iter()
        .map(|&f| subsample_split(split, f, plan.seed))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..fr.len())
        .flat_map(|i| (0..shapes.len()).map(move |j| (i, j)))
        .collect();
    let results = map_ordered(&cells, mode, |_, &(i, j)| {
        let id = format!("f{}-L{}-d{}", fr[i], shapes[j].n_layer, shapes[j].d_model);
        run_cell(shapes[j], &subsets[i], split, plan, plan.seed, &id, mode)
    });
    let mut points = Vec::with_capacity(results.len());
    for r in results {
        points.push(r?.point);
    }
    points.sort_by(|a, b| a.d.cmp(&b.d).then(a.n.cmp(&b.n)));
    let fits = fit_by_data_size(&points, &fr, kind)?;
    Ok(DataScalingResult { points, fits, kind })
}

/// Validation loss per epoch under repeated passes over the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionCurve {
    pub initial_valid_loss: f64,
    pub valid_losses: Vec<f64>,
    /// First epoch (1-based) whose improvement is under 1% of the total
    /// improvement so far.
    pub knee: Option<usize>,
    /// Some epoch after the best one has a higher validation loss.
    pub overfit: bool,
    pub best_epoch: usize,
}

/// Knee and overfit annotations for a curve starting at `initial`.
pub fn annotate_repetition(initial: f64, losses: &[f64]) -> RepetitionCurve {
    let mut prev = initial;
    let mut knee = None;
    for (e, &l) in losses.iter().enumerate() {
        let gain = prev - l;
        let total = initial - l;
        if knee.is_none() && (gain <= 0.0 || gain < 0.01 * total) {
            knee = Some(e + 1);
        }
        prev = l;
    }
    let best = (0..losses.len()).min_by(|&a, &b| losses[a].total_cmp(&losses[b])).unwrap_or(0);
    let overfit = losses.iter().skip(best + 1).any(|&l| l > losses[best]);
    RepetitionCurve {
        initial_valid_loss: initial,
        valid_losses: losses.to_vec(),
        knee,
        overfit,
        best_epoch: best + 1,
    }
}

/// Trains for exactly `max_epochs` epochs with Adam and no early stopping,
/// recording the validation curve.
pub fn repetition_sweep(
    model: Lsrm,
    split: &SplitDataset,
    plan: &TrainPlan,
    max_epochs: usize,
    mode: Parallelism,
) -> Result<RepetitionCurve> {
    if max_epochs < 2 {
        return Err(ScalingError::Precondition(format!(
            "repetition sweep needs max_epochs >= 2, got {max_epochs}"
        )));
    }
    let mut plan = plan.clone();
    plan.max_epochs = max_epochs;
    plan.patience = max_epochs + 1;
    plan.ablation = if plan.ablation.layerwise() {
        Ablation::NoSwitchover
    } else {
        Ablation::None
    };
    let trainer = Trainer::new(plan, split, model.shape().n_layer, mode)?;
    let st = trainer.start(model)?;
    let out = trainer.run(st, |_| Ok(()))?;
    let losses: Vec<f64> = out.log.epochs.iter().map(|e| e.valid_loss).collect();
    Ok(annotate_repetition(out.log.initial_valid_loss, &losses))
}
