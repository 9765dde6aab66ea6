use super::*;
use crate::data::store::{prepare, PrepareOptions};
use crate::data::synthetic::{generate, SyntheticConfig};
use crate::data::SplitDataset;
use crate::exec::Parallelism;
use crate::model::{Batch, ForwardOptions, Lsrm, ModelShape};

fn smoke_split() -> SplitDataset {
    let corpus = generate(&SyntheticConfig {
        users: 20,
        items: 30,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let opts = PrepareOptions {
        cold_start_fraction: 0.0,
        ..Default::default()
    };
    prepare(&corpus.interactions, &opts).unwrap().split
}

fn smoke_plan() -> TrainPlan {
    TrainPlan {
        batch_size: 8,
        chunk_size: 4,
        max_epochs: 12,
        lr_peak: 1e-2,
        lr_floor: 1e-3,
        sgd_lr_factor: 10.0,
        seed: 3,
        ..Default::default()
    }
}

fn smoke_model(split: &SplitDataset) -> Lsrm {
    Lsrm::init(ModelShape::standard(2, 8, 2, 16, split.catalog.len()).unwrap(), 2).unwrap()
}

#[test]
fn smoke_run_improves_and_switches_once() {
    let split = smoke_split();
    let out = train_two_stage(smoke_model(&split), &split, &smoke_plan(), Parallelism::Parallel).unwrap();
    let log = &out.log;
    assert!(log.final_valid_loss().unwrap() < log.initial_valid_loss, "{log:?}");
    assert_eq!(log.transitions(), 1);
    let first_sgd = log.epochs.iter().position(|e| e.stage == Stage::Sgd).unwrap();
    assert!(log.epochs[first_sgd..].iter().all(|e| e.stage == Stage::Sgd));
    assert_eq!(log.switchover_epoch, Some(first_sgd));
    let min = log.epochs.iter().map(|e| e.valid_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(log.best_valid_loss, Some(min));
    let trainer = Trainer::new(smoke_plan(), &split, 2, Parallelism::Sequential).unwrap();
    assert_eq!(trainer.valid_loss(&out.best).unwrap(), min);
}

#[test]
fn identical_seeds_reproduce_the_log_across_execution_modes() {
    let split = smoke_split();
    let mut plan = smoke_plan();
    plan.max_epochs = 4;
    let a = train_two_stage(smoke_model(&split), &split, &plan, Parallelism::Parallel).unwrap();
    let b = train_two_stage(smoke_model(&split), &split, &plan, Parallelism::Sequential).unwrap();
    assert_eq!(a.log.losses(), b.log.losses());
    plan.seed += 1;
    let c = train_two_stage(smoke_model(&split), &split, &plan, Parallelism::Parallel).unwrap();
    assert_ne!(a.log.losses(), c.log.losses());
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let split = smoke_split();
    let plan = TrainPlan {
        lr_peak: 0.0,
        lr_floor: 0.0,
        weight_decay: 0.0,
        max_epochs: 2,
        ..smoke_plan()
    };
    let model = smoke_model(&split);
    let before = model.params().clone();
    let out = train_two_stage(model, &split, &plan, Parallelism::Parallel).unwrap();
    for (a, b) in out.state.model.params().iter().zip(before.iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let split = smoke_split();
    let mut plan = smoke_plan();
    plan.max_epochs = 6;
    plan.patience = 10;
    let full = train_two_stage(smoke_model(&split), &split, &plan, Parallelism::Parallel).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    let shape = *smoke_model(&split).shape();
    for stop_after in [2, 5] {
        let trainer = Trainer::new(plan.clone(), &split, 2, Parallelism::Parallel).unwrap();
        let mut st = trainer.start(smoke_model(&split)).unwrap();
        for _ in 0..stop_after {
            trainer.run_epoch(&mut st).unwrap();
        }
        save_checkpoint(&path, &st, &plan).unwrap();
        let (loaded, loaded_plan) = load_checkpoint(&path, Some(&shape)).unwrap();
        assert_eq!(loaded_plan, plan);
        for (a, b) in loaded.model.params().iter().zip(st.model.params().iter()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(loaded.optimizer, st.optimizer);
        let resumed = trainer.run(loaded, |_| Ok(())).unwrap();
        assert_eq!(resumed.log.losses(), full.log.losses(), "stopped after {stop_after}");
    }
}

#[test]
fn checkpoint_rejects_wrong_catalog_and_corruption() {
    let split = smoke_split();
    let plan = TrainPlan { max_epochs: 2, ..smoke_plan() };
    let trainer = Trainer::new(plan.clone(), &split, 2, Parallelism::Parallel).unwrap();
    let mut st = trainer.start(smoke_model(&split)).unwrap();
    trainer.run_epoch(&mut st).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_checkpoint(&path, &st, &plan).unwrap();
    let mut wrong = *st.model.shape();
    wrong.n_items += 1;
    let msg = load_checkpoint(&path, Some(&wrong)).unwrap_err().to_string();
    assert!(msg.contains("n_items"), "{msg}");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load_checkpoint(&path, None).is_err());
    std::fs::write(&path, b"garbage").unwrap();
    assert!(load_checkpoint(&path, None).is_err());
}

#[test]
fn adam_memorises_a_single_pair() {
    let shape = ModelShape::standard(1, 16, 2, 4, 20).unwrap();
    let mut model = Lsrm::init(shape, 1).unwrap();
    let batch = Batch::training(&[&[3, 7, 11]], &shape).unwrap();
    let mut st = OptimizerState::adam(model.params(), AdamConfig::default());
    let opts = ForwardOptions::inference();
    for _ in 0..300 {
        let out = model.loss_and_grad(&batch, &opts, 1.0).unwrap();
        adam_step(model.params_mut(), &out.grads, &mut st, 0.02, 0.0).unwrap();
    }
    assert!(model.loss(&batch, &opts).unwrap() < 0.01);
}

#[test]
fn ablation_variants_follow_their_switches() {
    let split = smoke_split();
    for ab in Ablation::ALL {
        let plan = TrainPlan {
            ablation: ab,
            max_epochs: 4,
            dropout_bottom: Some(0.3),
            dropout_top: Some(0.1),
            ..smoke_plan()
        };
        let trainer = Trainer::new(plan.clone(), &split, 2, Parallelism::Parallel).unwrap();
        let rates = trainer.dropout_rates().to_vec();
        if ab.layerwise() {
            assert_eq!(rates, vec![0.3, 0.1]);
        } else {
            assert_eq!(rates, vec![0.2, 0.2]);
        }
        let st = trainer.start(smoke_model(&split)).unwrap();
        let out = trainer.run(st, |_| Ok(())).unwrap();
        assert_eq!(out.log.transitions(), usize::from(ab.switchover()), "{ab:?}");
    }
}

#[test]
fn plan_validation() {
    assert!(TrainPlan { batch_size: 0, ..Default::default() }.validate().is_err());
    assert!(TrainPlan { max_epochs: 1, ..Default::default() }.validate().is_err());
    assert!(TrainPlan { max_epochs: 1, ablation: Ablation::NoSwitchover, ..Default::default() }.validate().is_ok());
    assert!(TrainPlan { dropout_bottom: Some(0.1), dropout_top: Some(0.3), ..Default::default() }.validate().is_err());
    assert_eq!(TrainPlan::default().dropout_endpoints(2), (0.2, 0.2));
    assert_eq!(TrainPlan::default().dropout_endpoints(24), (0.4, 0.1));
}
