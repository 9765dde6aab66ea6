use super::{catalog_digest, load_dataset};
use crate::config::require_path;
use crate::manifest::{write_atomic, RunManifest};
use crate::{ConfigError, Context};
use anyhow::{Context as _, Result};
use lsrm_core::model::Lsrm;
use lsrm_core::train::{load_checkpoint, save_checkpoint, Trainer};
use lsrm_core::Parallelism;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT: &str = "checkpoint.bin";

/// Written to `train/summary.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub transitions: usize,
    pub switchover_epoch: Option<usize>,
    pub best_epoch: Option<usize>,
    pub best_valid_loss: Option<f64>,
    pub initial_valid_loss: f64,
    pub final_valid_loss: Option<f64>,
    pub catalog_digest: String,
}

/// Trains into `<out>/train`, checkpointing after every epoch.
pub fn train(ctx: &Context, resume: bool, stop_after: Option<usize>) -> Result<()> {
    let cfg = &ctx.config;
    let (ds, dman) = load_dataset(ctx)?;
    let shape = cfg.model.shape(ds.split.catalog.len())?;
    let dir = ctx.out.join("train");
    let ckpt = dir.join(CHECKPOINT);
    let trainer = Trainer::new(cfg.train.clone(), &ds.split, shape.n_layer, Parallelism::Parallel)?;
    let st = if resume {
        require_path(&ckpt, "checkpoint")?;
        let (st, plan) = load_checkpoint(&ckpt, Some(&shape)).map_err(|e| ConfigError(e.to_string()))?;
        if plan != cfg.train {
            return Err(ConfigError(format!("{} was written with a different [train] plan", ckpt.display())).into());
        }
        st
    } else {
        trainer.start(Lsrm::init(shape, cfg.seed)?)?
    };
    let mut run = RunManifest::new("train", cfg.digest(), Some(dman.digest.clone()));
    let first_epoch = st.next_epoch;
    let mut st = st;
    while !st.finished && stop_after.is_none_or(|k| st.next_epoch - first_epoch < k) {
        trainer.run_epoch(&mut st)?;
        save_checkpoint(&ckpt, &st, &cfg.train).context("saving checkpoint")?;
        let e = st.log.epochs.last().expect("one epoch");
        eprintln!("epoch {} ({:?}): train {:.4} valid {:.4}", e.epoch, e.stage, e.train_loss, e.valid_loss);
    }
    if st.next_epoch == first_epoch {
        save_checkpoint(&ckpt, &st, &cfg.train).context("saving checkpoint")?;
    }
    let log = &st.log;
    write_atomic(&dir.join("log.jsonl"), log.to_json_lines().as_bytes())?;
    let summary = TrainSummary {
        epochs: log.epochs.len(),
        transitions: log.transitions(),
        switchover_epoch: log.switchover_epoch,
        best_epoch: log.best_epoch,
        best_valid_loss: log.best_valid_loss,
        initial_valid_loss: log.initial_valid_loss,
        final_valid_loss: log.final_valid_loss(),
        catalog_digest: catalog_digest(&dman)?,
    };
    write_atomic(&dir.join("summary.json"), (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    run.artifacts = vec![CHECKPOINT.into(), "log.jsonl".into(), "summary.json".into()];
    run.finish(&dir)?;
    println!(
        "{} epochs, {} optimizer switch(es), best valid loss {:.4} at epoch {}{}",
        summary.epochs,
        summary.transitions,
        summary.best_valid_loss.unwrap_or(f64::NAN),
        summary.best_epoch.map_or("-".into(), |e| e.to_string()),
        if st.finished { "" } else { " (stopped early; resume to continue)" }
    );
    Ok(())
}
