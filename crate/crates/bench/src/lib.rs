//! Shared fixtures for the benchmarks.

use l2rnn::data::{generate_task, TaskConfig, TaskKind};
use l2rnn::{Example, TtVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Noisy random-task training sets for lengths `L, 2L, 2L+1` with `L = 2`.
pub fn random_task(n: usize, sigma2: f64, seed: u64) -> Vec<Vec<Example>> {
    let mut cfg = TaskConfig::new(TaskKind::RandomRnn, n, sigma2, seed);
    cfg.test_size = 1;
    let task = generate_task(&cfg).expect("valid config");
    task.train.into_iter().map(|d| d.examples).collect()
}

/// Gaussian sequences of `len` inputs in `R^d`.
pub fn sequences(count: usize, len: usize, d: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            (0..len)
                .map(|_| (0..d).map(|_| r.random::<f64>() - 0.5).collect())
                .collect()
        })
        .collect()
}

/// Uniform-rank TT with entries in `[-0.5, 0.5)`.
pub fn random_tt(shape: &[usize], rank: usize, seed: u64) -> TtVector {
    let mut r = rng(seed);
    TtVector::uniform(shape, rank, |_, _, _, _| r.random::<f64>() - 0.5).expect("valid shape")
}
