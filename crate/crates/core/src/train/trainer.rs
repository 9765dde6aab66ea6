use super::{
    adam_step, cosine_lr, detect_switchover, sgd_step, EpochRecord, OptimizerState, Result, Stage,
    TrainError, TrainLog, TrainPlan,
};
use crate::data::{ItemIdx, SplitDataset};
use crate::exec::{map_ordered, Parallelism};
use crate::model::{Batch, ForwardOptions, Lsrm};
use crate::rng::{derive_seed, stream};
use crate::tensor::{Gradients, ParamStore};
use rand::seq::SliceRandom;
use std::time::Instant;

const TAG_SHUFFLE: u64 = 0x5_4FF1;
const TAG_DROPOUT: u64 = 0xD_0017;

/// Everything needed to continue training from an epoch boundary.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Lsrm,
    pub optimizer: OptimizerState,
    pub next_epoch: usize,
    pub step: u64,
    pub stage: Stage,
    /// Validation losses of the current stage; the SGD stage starts with the
    /// loss at the switch.
    pub stage_losses: Vec<f64>,
    pub best_params: Option<ParamStore>,
    pub log: TrainLog,
    pub finished: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest epoch-end validation loss.
    pub best: Lsrm,
    pub log: TrainLog,
    pub state: TrainState,
}

/// Mean next-item cross-entropy of `(history, target)` pairs, in inference
/// mode. Histories longer than the window keep their most recent items.
pub fn evaluate_loss(
    model: &Lsrm,
    pairs: &[(&[ItemIdx], ItemIdx)],
    eval_batch: usize,
    mode: Parallelism,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(TrainError::InvalidPlan("no evaluation pairs".into()));
    }
    let chunks: Vec<&[(&[ItemIdx], ItemIdx)]> = pairs.chunks(eval_batch.max(1)).collect();
    let sums = map_ordered(&chunks, mode, |_, chunk| -> Result<f64> {
        let hist: Vec<&[ItemIdx]> = chunk.iter().map(|p| p.0).collect();
        let tgt: Vec<ItemIdx> = chunk.iter().map(|p| p.1).collect();
        let batch = Batch::last_item(&hist, &tgt, model.shape())?;
        Ok(model.loss(&batch, &ForwardOptions::inference())? * chunk.len() as f64)
    });
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / pairs.len() as f64)
}

/// Drives training over one split.
pub struct Trainer<'a> {
    plan: TrainPlan,
    split: &'a SplitDataset,
    mode: Parallelism,
    train_rows: Vec<usize>,
    rates: Vec<f64>,
    total_steps: u64,
    warmup: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(plan: TrainPlan, split: &'a SplitDataset, n_layer: usize, mode: Parallelism) -> Result<Self> {
        plan.validate()?;
        let rates = plan.dropout_rates(n_layer)?;
        let train_rows: Vec<usize> = (0..split.users.len())
            .filter(|&i| split.users[i].train.len() >= 2)
            .collect();
        if train_rows.is_empty() {
            return Err(TrainError::NoTrainingData);
        }
        let steps_per_epoch = train_rows.len().div_ceil(plan.batch_size) as u64;
        let total_steps = steps_per_epoch * plan.max_epochs as u64;
        let warmup = (plan.warmup_fraction * total_steps as f64).round() as u64;
        Ok(Self {
            plan,
            split,
            mode,
            train_rows,
            rates,
            total_steps,
            warmup,
        })
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    pub fn dropout_rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn valid_loss(&self, model: &Lsrm) -> Result<f64> {
        let pairs: Vec<(&[ItemIdx], ItemIdx)> = self
            .split
            .users
            .iter()
            .map(|u| (u.train.as_slice(), u.valid))
            .collect();
        evaluate_loss(model, &pairs, self.plan.eval_batch, self.mode)
    }

    /// Fresh state with the initial validation loss recorded.
    pub fn start(&self, model: Lsrm) -> Result<TrainState> {
        if model.shape().n_layer != self.rates.len() {
            return Err(TrainError::InvalidPlan("model depth differs from the trainer's".into()));
        }
        let initial = self.valid_loss(&model)?;
        let optimizer = OptimizerState::adam(model.params(), self.plan.adam);
        Ok(TrainState {
            model,
            optimizer,
            next_epoch: 0,
            step: 0,
            stage: Stage::Adam,
            stage_losses: Vec::new(),
            best_params: None,
            log: TrainLog {
                initial_valid_loss: initial,
                ..Default::default()
            },
            finished: false,
        })
    }

    fn lr(&self, step: u64, stage: Stage) -> f64 {
        let p = &self.plan;
        let lr = cosine_lr(step.min(self.total_steps), self.total_steps, p.lr_peak, p.lr_floor, self.warmup);
        match stage {
            Stage::Adam => lr,
            Stage::Sgd => lr * p.sgd_lr_factor,
        }
    }

    /// Loss and summed gradient of one batch, split into micro-chunks
    /// whose gradients are reduced in chunk order.
    fn batch_gradient(&self, model: &Lsrm, users: &[usize], step: u64) -> Result<(f64, usize, Gradients)> {
        let seqs: Vec<&[ItemIdx]> = users.iter().map(|&u| self.split.users[u].train.as_slice()).collect();
        let batches = seqs
            .chunks(self.plan.chunk_size)
            .map(|c| Batch::training(c, model.shape()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let total: usize = batches.iter().map(Batch::loss_positions).sum();
        let outs = map_ordered(&batches, self.mode, |c, b| {
            let opts = ForwardOptions {
                training: true,
                dropout: &self.rates,
                seed: derive_seed(self.plan.seed, &[TAG_DROPOUT, step, c as u64]),
            };
            model.loss_and_grad(b, &opts, b.loss_positions() as f64 / total as f64)
        });
        let mut grads = Gradients::zeros_like(model.params());
        let mut loss = 0.0;
        for o in outs {
            let o = o?;
            loss += o.loss;
            grads.add_assign(&o.grads);
        }
        Ok((loss, total, grads))
    }

    /// Runs one epoch and applies the stage logic.
    pub fn run_epoch(&self, st: &mut TrainState) -> Result<()> {
        if st.finished {
            return Ok(());
        }
        let started = Instant::now();
        let epoch = st.next_epoch;
        let mut order = self.train_rows.clone();
        order.shuffle(&mut stream(self.plan.seed, &[TAG_SHUFFLE, epoch as u64]));
        let (mut loss_sum, mut positions) = (0.0, 0usize);
        let mut lr = 0.0;
        for users in order.chunks(self.plan.batch_size) {
            let (loss, count, grads) = self.batch_gradient(&st.model, users, st.step)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, step: st.step });
            }
            lr = self.lr(st.step, st.stage);
            let wd = self.plan.weight_decay;
            match st.stage {
                Stage::Adam => adam_step(st.model.params_mut(), &grads, &mut st.optimizer, lr, wd)?,
                Stage::Sgd => sgd_step(st.model.params_mut(), &grads, &mut st.optimizer, lr, wd)?,
            }
            st.step += 1;
            loss_sum += loss * count as f64;
            positions += count;
        }
        let valid = self.valid_loss(&st.model)?;
        if !valid.is_finite() {
            return Err(TrainError::NonFinite { epoch, step: st.step });
        }
        st.log.epochs.push(EpochRecord {
            epoch,
            stage: st.stage,
            train_loss: loss_sum / positions as f64,
            valid_loss: valid,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if st.log.best_valid_loss.is_none_or(|b| valid < b) {
            st.log.best_valid_loss = Some(valid);
            st.log.best_epoch = Some(epoch);
            st.best_params = Some(st.model.params().clone());
        }
        st.stage_losses.push(valid);
        st.next_epoch += 1;

        let p = &self.plan;
        let plateau = detect_switchover(&st.stage_losses, p.patience, p.tolerance);
        match st.stage {
            Stage::Adam if p.ablation.switchover() => {
                if plateau || st.next_epoch >= p.max_epochs - p.sgd_min_epochs {
                    st.stage = Stage::Sgd;
                    st.optimizer = OptimizerState::sgd(p.sgd_momentum);
                    st.stage_losses = vec![valid];
                    st.log.switchover_epoch = Some(st.next_epoch);
                }
            }
            _ => st.finished |= plateau,
        }
        st.finished |= st.next_epoch >= p.max_epochs;
        Ok(())
    }

    /// Trains to completion, calling `on_epoch` after every epoch.
    pub fn run(
        &self,
        mut st: TrainState,
        mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
    ) -> Result<TrainOutcome> {
        while !st.finished {
            self.run_epoch(&mut st)?;
            on_epoch(&st)?;
        }
        let best_params = st.best_params.clone().unwrap_or_else(|| st.model.params().clone());
        let best = Lsrm::from_params(*st.model.shape(), best_params)?;
        Ok(TrainOutcome {
            best,
            log: st.log.clone(),
            state: st,
        })
    }
}

/// Convenience wrapper: start and run to completion.
pub fn train_two_stage(model: Lsrm, split: &SplitDataset, plan: &TrainPlan, mode: Parallelism) -> Result<TrainOutcome> {
    let trainer = Trainer::new(plan.clone(), split, model.shape().n_layer, mode)?;
    let st = trainer.start(model)?;
    trainer.run(st, |_| Ok(()))
}
