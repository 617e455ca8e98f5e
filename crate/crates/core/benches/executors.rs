use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nke_core::data::{make_synthetic_dataset, Split, SyntheticSpec};
use nke_core::eval::{sweep, AttackKind, SweepSpec};
use nke_core::exec::Executor;
use nke_core::nn::{train, Architecture, TrainConfig};

fn executors() -> Vec<(&'static str, Executor)> {
    vec![
        ("sequential", Executor::sequential()),
        ("parallel", Executor::parallel(None).expect("thread pool")),
    ]
}

fn training_epoch(c: &mut Criterion) {
    let data = make_synthetic_dataset(&SyntheticSpec::new(10, 256, 0.5, 1), Split::Train).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::mnist()
    };
    let mut group = c.benchmark_group("train_epoch_256");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut model = Architecture::MnistCnn.build::<f32>(0);
                train(&mut model, black_box(&data), &cfg, &exec).unwrap();
                model
            })
        });
    }
    group.finish();
}

fn retention_sweep(c: &mut Criterion) {
    let data = make_synthetic_dataset(&SyntheticSpec::new(10, 64, 0.5, 2), Split::Test).unwrap();
    let model = Architecture::MnistCnn.build::<f32>(3);
    let spec = SweepSpec {
        epsilons: SweepSpec::grid(0.0, 0.5, 0.25).unwrap(),
        steps: vec![1, 3],
        kinds: vec![AttackKind::Descend],
        sample_cap: None,
        ..SweepSpec::mnist()
    };
    let mut group = c.benchmark_group("sweep_64");
    group.sample_size(10);
    for (name, exec) in executors() {
        group.bench_function(name, |b| b.iter(|| sweep(&model, black_box(&data), &spec, &exec, None)));
    }
    group.finish();
}

criterion_group!(benches, training_epoch, retention_sweep);
criterion_main!(benches);
