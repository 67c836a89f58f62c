//! Gradient-based refinement of a learned model on its training data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{invalid, Result};
use crate::model::{Gradients, Linear2RNN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Restarts with a halved learning rate after a non-finite loss.
    pub max_retries: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            lr: 1e-3,
            epochs: 100,
            batch_size: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            max_retries: 3,
        }
    }
}

/// Adam moments over the flattened parameters `(h0, A, Omega)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(model: &Linear2RNN) -> Self {
        let k = model.num_parameters();
        Self {
            m: vec![0.0; k],
            v: vec![0.0; k],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(model: &mut Linear2RNN, grads: &Gradients, state: &mut OptimizerState, cfg: &RefineConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut k = 0;
    for (p, g) in model.params_mut().into_iter().zip(grads.params()) {
        for (w, &gi) in p.iter_mut().zip(g) {
            let m = &mut state.m[k];
            let v = &mut state.v[k];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
            *w -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            k += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub initial_loss: f64,
    pub best_loss: f64,
    /// 0 means the starting model was never improved on.
    pub best_epoch: usize,
    /// Full-data loss after each epoch of the last attempt.
    pub epoch_losses: Vec<f64>,
    pub retries: usize,
    pub final_lr: f64,
}

/// Minibatch refinement of `m0`; returns the iterate with the lowest training
/// loss, which is never worse than `m0`.
pub fn sgd_refine(m0: &Linear2RNN, data: &[Example], cfg: &RefineConfig) -> Result<(Linear2RNN, RefineReport)> {
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be >= 1"));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(invalid("learning rate must be finite and non-negative"));
    }
    let initial_loss = m0.loss(data)?;
    let mut best = m0.clone();
    let mut best_loss = initial_loss;
    let mut best_epoch = 0;
    let mut report = RefineReport {
        initial_loss,
        best_loss,
        best_epoch,
        epoch_losses: Vec::new(),
        retries: 0,
        final_lr: cfg.lr,
    };
    if data.is_empty() || !initial_loss.is_finite() {
        return Ok((best, report));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = cfg.lr;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for attempt in 0..=cfg.max_retries {
        let run = RefineConfig { lr, ..cfg.clone() };
        let mut model = m0.clone();
        let mut state = OptimizerState::new(&model);
        let mut losses = Vec::with_capacity(cfg.epochs);
        let mut blew_up = false;
        'epochs: for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| data[i].clone()));
                let g = model.gradients(&batch)?;
                if !g.loss.is_finite() || !g.norm().is_finite() {
                    blew_up = true;
                    break 'epochs;
                }
                match cfg.optimizer {
                    Optimizer::Adam => adam_step(&mut model, &g, &mut state, &run),
                    Optimizer::Sgd => model.axpy(-lr, &g),
                }
            }
            let loss = model.loss(data)?;
            if !loss.is_finite() {
                blew_up = true;
                break;
            }
            losses.push(loss);
            if loss < best_loss {
                best_loss = loss;
                best_epoch = epoch;
                best = model.clone();
            }
        }
        report.epoch_losses = losses;
        report.retries = attempt;
        report.final_lr = lr;
        if !blew_up {
            break;
        }
        log::warn!("refinement produced a non-finite loss at lr {lr:.3e}; halving");
        lr *= 0.5;
    }
    report.best_loss = best_loss;
    report.best_epoch = best_epoch;
    Ok((best, report))
}
