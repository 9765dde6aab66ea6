//! Sequential against data-parallel execution of the hot loops: one
//! training epoch, validation loss and full-catalog evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lsrm_core::data::store::{prepare, PrepareOptions, PreparedDataset};
use lsrm_core::data::synthetic::{generate, SyntheticConfig};
use lsrm_core::eval::{evaluate_leave_one_out, EvalOptions, ModelScorer};
use lsrm_core::model::{Lsrm, ModelShape};
use lsrm_core::train::{TrainPlan, Trainer};
use lsrm_core::Parallelism;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn corpus() -> PreparedDataset {
    let cfg = SyntheticConfig {
        users: 400,
        items: 200,
        ..Default::default()
    };
    let c = generate(&cfg).expect("corpus");
    let opts = PrepareOptions {
        cold_start_fraction: 0.0,
        ..Default::default()
    };
    prepare(&c.interactions, &opts).expect("prepare")
}

fn model(ds: &PreparedDataset) -> Lsrm {
    let shape = ModelShape::standard(2, 32, 2, 16, ds.split.catalog.len()).expect("shape");
    Lsrm::init(shape, 1).expect("init")
}

fn bench(c: &mut Criterion) {
    let ds = corpus();
    let m = model(&ds);
    let plan = TrainPlan {
        batch_size: 64,
        max_epochs: 2,
        ..Default::default()
    };

    let mut g = c.benchmark_group("train_epoch");
    g.sample_size(10);
    for (name, mode) in MODES {
        let trainer = Trainer::new(plan.clone(), &ds.split, 2, mode).expect("trainer");
        let start = trainer.start(m.clone()).expect("start");
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut st = start.clone();
                trainer.run_epoch(&mut st).expect("epoch");
                st
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("valid_loss");
    for (name, mode) in MODES {
        let trainer = Trainer::new(plan.clone(), &ds.split, 2, mode).expect("trainer");
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| trainer.valid_loss(&m).expect("loss")));
    }
    g.finish();

    let mut g = c.benchmark_group("leave_one_out");
    let opts = EvalOptions::default();
    let scorer = ModelScorer { model: &m };
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_leave_one_out(&scorer, &ds.split, &opts, mode).expect("eval"))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
