use std::hint::black_box;

use capdet_core::detect::detect_many;
use capdet_core::nn::init_model;
use capdet_core::sim::{generate_run, SimParams};
use capdet_core::train::{build_balanced_dataset, Hyperparams, LabeledRun};
use capdet_core::types::DetectorConfig;
use capdet_core::Exec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn runs(n: usize, samples: usize) -> Vec<LabeledRun> {
    (0..n)
        .map(|i| {
            generate_run(1, samples, i as u64, &SimParams::default())
                .unwrap()
                .with_identity(format!("b{i}"), i as u16 + 1)
                .into_labeled()
        })
        .collect()
}

fn detection(c: &mut Criterion) {
    let model = init_model::<f32>(2000, 0.739, 1).unwrap();
    let cfg = DetectorConfig::default();
    let traces: Vec<_> = runs(8, 6_000_000).into_iter().map(|r| r.trace).collect();
    let mut g = c.benchmark_group("detect_8x6e6");
    g.sample_size(10);
    g.throughput(Throughput::Elements(8 * 6_000_000));
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| detect_many(&model, black_box(&traces), &cfg, exec))
        });
    }
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let hp = Hyperparams::default();
    let model = init_model::<f32>(hp.window_size, hp.dropout, 1).unwrap();
    let data = runs(4, 3_000_000);
    let refs: Vec<&LabeledRun> = data.iter().collect();
    let set = build_balanced_dataset(&refs, &hp.detector_config(), 1, Exec::Sequential).unwrap();
    let xs: Vec<&[f32]> = set.batch().into_iter().cycle().take(hp.batch_size).collect();
    let ys: Vec<f32> = set.labels().into_iter().cycle().take(hp.batch_size).collect();
    let mut g = c.benchmark_group("loss_and_grads_batch128");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| model.loss_and_grads(black_box(&xs), &ys, 7, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, detection, training_step);
criterion_main!(benches);
