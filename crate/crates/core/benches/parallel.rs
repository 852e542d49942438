use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bdrc::data::{synth_generate, Dataset, SynthSpec};
use bdrc::decode::{detect_dataset, InferenceConfig};
use bdrc::eval::{evaluate_with, EvalConfig};
use bdrc::model::Model;
use bdrc::par::Exec;
use bdrc::train::{train_with, TrainConfig};

fn policies() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("sequential", Exec::Sequential)];
    #[cfg(feature = "parallel")]
    v.push(("parallel", Exec::Parallel));
    v
}

fn dataset(videos: usize) -> Dataset {
    synth_generate(&SynthSpec {
        num_videos: videos,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn bench_detect(c: &mut Criterion) {
    let ds = dataset(32);
    let cfg = TrainConfig::default();
    let model = Model::init(cfg.model_config(&ds), 0).unwrap();
    let inf = InferenceConfig::default();
    let mut g = c.benchmark_group("detect_dataset");
    for (name, exec) in policies() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| detect_dataset(&ds, &model, &inf, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let ds = dataset(200);
    let cfg = TrainConfig::default();
    let model = Model::init(cfg.model_config(&ds), 0).unwrap();
    // untrained model: many low-quality candidates per video
    let preds = detect_dataset(&ds, &model, &InferenceConfig::default(), Exec::default()).unwrap();
    let eval = EvalConfig::default();
    let mut g = c.benchmark_group("evaluate");
    for (name, exec) in policies() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_with(&preds, &ds, &eval, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_train_epoch(c: &mut Criterion) {
    let ds = dataset(16);
    let cfg = TrainConfig {
        epochs: 1,
        decay_epoch: None,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("train_epoch");
    g.sample_size(10);
    for (name, exec) in policies() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_with(&ds, &cfg, exec, |_, _| {}).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_detect, bench_evaluate, bench_train_epoch);
criterion_main!(benches);
