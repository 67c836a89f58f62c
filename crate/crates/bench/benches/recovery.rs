use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use l2rnn::recovery::{build_design, recover, recover_tiht_tt};
use l2rnn::tt::{batch_apply, batch_apply_adjoint, batch_gram};
use l2rnn::{sgd_refine, spectral_learn, Linear2RNN, Method, RecoveryConfig, RefineConfig, SpectralConfig};
use l2rnn_bench::{random_task, random_tt, rng, sequences};

fn tt_round(c: &mut Criterion) {
    let mut g = c.benchmark_group("tt_round");
    for l in [4, 6, 8] {
        let shape = vec![3; l];
        let a = random_tt(&shape, 5, 1);
        let b = random_tt(&shape, 5, 2);
        let sum = a.add(&b).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(l), &sum, |bch, t| {
            bch.iter(|| black_box(t.round(5, 0.0).unwrap()))
        });
    }
    g.finish();
}

fn batch_ops(c: &mut Criterion) {
    let mut g = c.benchmark_group("batch_ops");
    let seqs = sequences(32, 7, 4, 3);
    let batch: Vec<&[Vec<f64>]> = seqs.iter().map(|s| s.as_slice()).collect();
    let mut shape = vec![4; 7];
    shape.push(2);
    let h = random_tt(&shape, 5, 4);
    let residual = batch_apply(&batch, &h).unwrap();
    g.bench_function("gram", |b| b.iter(|| black_box(batch_gram(&batch))));
    g.bench_function("apply", |b| b.iter(|| black_box(batch_apply(&batch, &h).unwrap())));
    g.bench_function("adjoint", |b| {
        b.iter(|| black_box(batch_apply_adjoint(&batch, &residual).unwrap()))
    });
    g.finish();
}

fn dense_recovery(c: &mut Criterion) {
    let mut g = c.benchmark_group("recover_len5");
    g.sample_size(10);
    let data = random_task(500, 0.1, 5);
    let rd = build_design(&data[2], 3).unwrap();
    for method in [Method::LeastSquares, Method::Iht, Method::Tiht, Method::NuclearNorm] {
        let mut cfg = RecoveryConfig::new(method, 5);
        cfg.max_iters = 200;
        g.bench_function(method.name(), |b| b.iter(|| black_box(recover(&rd, &cfg).unwrap())));
    }
    let mut cfg = RecoveryConfig::new(Method::TihtTt, 5);
    cfg.max_iters = 200;
    cfg.minibatch = Some(32);
    g.bench_function("tiht-tt", |b| {
        b.iter(|| black_box(recover_tiht_tt(&data[2], &cfg).unwrap()))
    });
    g.finish();
}

fn learning(c: &mut Criterion) {
    let mut g = c.benchmark_group("learn");
    g.sample_size(10);
    let data = random_task(1000, 1.0, 6);
    let cfg = SpectralConfig::new(2, RecoveryConfig::new(Method::LeastSquares, 5));
    g.bench_function("spectral_ls", |b| {
        b.iter(|| black_box(spectral_learn(&data, &cfg).unwrap()))
    });
    let union: Vec<_> = data.iter().flatten().cloned().collect();
    let start = Linear2RNN::random(5, 3, 2, 0.3, &mut rng(7));
    let rcfg = RefineConfig {
        epochs: 1,
        ..Default::default()
    };
    g.bench_function("refine_epoch", |b| {
        b.iter_batched(
            || start.clone(),
            |m| black_box(sgd_refine(&m, &union, &rcfg).unwrap()),
            BatchSize::SmallInput,
        )
    });
    g.bench_function("gradients_64", |b| {
        b.iter(|| black_box(start.gradients(&union[..64]).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, tt_round, batch_ops, dense_recovery, learning);
criterion_main!(benches);
