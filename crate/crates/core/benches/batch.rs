//! Batched loss and gradient: rayon fan-out against the single-threaded path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rccm::certificate::{loss_and_gradient, sample_training_set, Directions, Mode, TrainConfig};
use rccm::nn::NeuralCertificate;
use rccm::rng::{stream, Stream};
use rccm::system::{ControlAffineModel, Quadrotor};
use rccm::Execution;

fn batch(c: &mut Criterion) {
    let model = Quadrotor::default();
    let cfg = TrainConfig { n_samples: 256, ..TrainConfig::default() };
    let cert = NeuralCertificate::new(model.dims(), cfg.h_k, &cfg.hidden, cfg.hyper, &mut stream(0, Stream::Init));
    let samples = sample_training_set(&cfg, &mut stream(0, Stream::Samples));
    let dims = model.dims();
    let dirs = Directions::sample(&mut stream(0, Stream::Directions), dims.q, dims.p, dims.q - dims.m, 64, Mode::Rccm);
    let mut group = c.benchmark_group("loss_and_gradient");
    group.sample_size(10);
    for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
        group.bench_with_input(BenchmarkId::new(name, samples.len()), &exec, |b, &exec| {
            b.iter(|| loss_and_gradient(&model, &cert, &samples, &dirs, Mode::Rccm, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
