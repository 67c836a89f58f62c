//! Estimation of Hankel tensors `H^(l)` from input/output examples.
//!
//! Each example of length `l` is a linear measurement
//! `y = <H^(l)>_{l,1}^T (x_1 (x) .. (x) x_l)`; stacking `N` of them gives the
//! regression `Y = X <H^(l)>_{l,1}`.

use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{spectral_norm_sq_of_gram, Svd, PINV_RCOND};
use crate::tensor::{kron_or_one, DenseTensor};
use crate::tt::{batch_apply, batch_apply_adjoint, batch_gram, row_major, TtCore, TtVector, DEFAULT_TT_TOL};

/// Consecutive objective increases that count as divergence.
const DIVERGENCE_PATIENCE: usize = 10;
/// Relative growth below this is not counted as an increase.
const INCREASE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LeastSquares,
    NuclearNorm,
    Iht,
    Tiht,
    TihtTt,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::LeastSquares => "ls",
            Method::NuclearNorm => "nuclear",
            Method::Iht => "iht",
            Method::Tiht => "tiht",
            Method::TihtTt => "tiht-tt",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" | "least-squares" => Ok(Method::LeastSquares),
            "nuclear" | "nuclear-norm" | "nn" => Ok(Method::NuclearNorm),
            "iht" => Ok(Method::Iht),
            "tiht" => Ok(Method::Tiht),
            "tiht-tt" => Ok(Method::TihtTt),
            other => Err(invalid(format!("unknown recovery method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub method: Method,
    pub rank: usize,
    /// Gradient step; `None` uses `1 / sigma_max(X)^2` (per minibatch for TT).
    #[serde(default)]
    pub step: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Minibatch size for the TT method; `None` means full batch.
    #[serde(default)]
    pub minibatch: Option<usize>,
    /// Minibatch steps shrink as `step / (1 + t / decay)`; `None` keeps them constant.
    #[serde(default)]
    pub step_decay: Option<f64>,
    pub seed: u64,
    /// Known output-noise variance; relaxes the nuclear-norm equality constraint.
    #[serde(default)]
    pub noise_variance: Option<f64>,
}

impl RecoveryConfig {
    pub fn new(method: Method, rank: usize) -> Self {
        Self {
            method,
            rank,
            step: None,
            max_iters: 5000,
            rel_tol: 1e-7,
            minibatch: None,
            step_decay: None,
            seed: 0,
            noise_variance: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(invalid("rank must be >= 1"));
        }
        if let Some(g) = self.step {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(invalid("step size must be finite and non-negative"));
            }
        }
        if self.minibatch == Some(0) {
            return Err(invalid("minibatch size must be >= 1"));
        }
        if let Some(t) = self.step_decay {
            if !(t > 0.0) {
                return Err(invalid("step decay must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub method: Method,
    pub length: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Relative Frobenius change of the last update.
    pub rel_change: f64,
    /// `||X <H>_{l,1} - Y||_F / ||Y||_F` on the training data (full data for TT).
    pub rel_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Recovered {
    pub estimate: DenseTensor,
    pub report: RecoveryReport,
}

#[derive(Debug, Clone)]
pub struct RecoveredTt {
    pub estimate: TtVector,
    pub report: RecoveryReport,
}

/// Stacked measurements: `x` is `N x d^l` with Kronecker rows, `y` is `N x p`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub l: usize,
    pub d: usize,
    pub p: usize,
}

impl RegressionData {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn hankel_shape(&self) -> Vec<usize> {
        let mut s = vec![self.d; self.l];
        s.push(self.p);
        s
    }

    /// `<T>_{l,1}` for an estimate of shape `(d, .., d, p)`.
    pub fn as_matrix(&self, t: &DenseTensor) -> Result<DMatrix<f64>> {
        if t.shape() != self.hankel_shape().as_slice() {
            return Err(mismatch(format!(
                "estimate shape {:?} differs from {:?}",
                t.shape(),
                self.hankel_shape()
            )));
        }
        Ok(DMatrix::from_row_slice(self.x.ncols(), self.p, t.data()))
    }

    pub fn as_tensor(&self, m: &DMatrix<f64>) -> DenseTensor {
        DenseTensor::new(self.hankel_shape(), row_major(m)).expect("shape")
    }

    /// `||X <T>_{l,1} - Y||_F`.
    pub fn residual(&self, t: &DenseTensor) -> Result<f64> {
        Ok((&self.x * self.as_matrix(t)? - &self.y).norm())
    }

    pub fn rel_residual(&self, t: &DenseTensor) -> Result<f64> {
        let r = self.residual(t)?;
        let ny = self.y.norm();
        Ok(if ny > 0.0 { r / ny } else { r })
    }
}

/// Design matrix with rows `x_1 (x) .. (x) x_l`; all examples must share length `l`.
pub fn build_design(examples: &[Example], d: usize) -> Result<RegressionData> {
    let first = examples.first().ok_or_else(|| invalid("no examples"))?;
    let l = first.len();
    let p = first.y.len();
    if examples.iter().any(|e| e.len() != l) {
        return Err(invalid("all examples must share one sequence length"));
    }
    if examples
        .iter()
        .any(|e| e.y.len() != p || e.x.iter().any(|x| x.len() != d))
    {
        return Err(mismatch("inconsistent input or output dimensions"));
    }
    let c = d.pow(l as u32);
    let n = examples.len();
    let mut xdata = Vec::with_capacity(n * c);
    let mut ydata = Vec::with_capacity(n * p);
    for e in examples {
        let refs: Vec<&[f64]> = e.x.iter().map(|v| v.as_slice()).collect();
        xdata.extend(kron_or_one(&refs));
        ydata.extend_from_slice(&e.y);
    }
    Ok(RegressionData {
        x: DMatrix::from_row_slice(n, c, &xdata),
        y: DMatrix::from_row_slice(n, p, &ydata),
        l,
        d,
        p,
    })
}

/// Minimum-norm least-squares estimate `X^+ Y`.
pub fn recover_least_squares(rd: &RegressionData) -> DenseTensor {
    let h = Svd::new(&rd.x).pinv(PINV_RCOND) * &rd.y;
    rd.as_tensor(&h)
}

fn ls_report(rd: &RegressionData, t: &DenseTensor, method: Method) -> Result<RecoveryReport> {
    Ok(RecoveryReport {
        method,
        length: rd.l,
        iterations: 0,
        converged: true,
        rel_change: 0.0,
        rel_residual: rd.rel_residual(t)?,
    })
}

fn balanced_split(l: usize) -> usize {
    l.div_ceil(2)
}

/// Reshapes `<H>_{l,1}` (row-major `c x p`) into the balanced matricization.
fn balanced(rd: &RegressionData, hm: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = rd.d.pow(balanced_split(rd.l) as u32);
    let cols = hm.len() / rows;
    DMatrix::from_row_slice(rows, cols, &row_major(hm))
}

fn unbalanced(rd: &RegressionData, bm: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(rd.x.ncols(), rd.p, &row_major(bm))
}

fn rel_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let num = (new - old).norm();
    let den = new.norm().max(old.norm());
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Singular-value soft thresholding.
fn svt(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut svd = Svd::new(m);
    for s in svd.s.iter_mut() {
        *s = (*s - tau).max(0.0);
    }
    svd.reconstruct()
}

/// Nuclear-norm minimization of the balanced matricization subject to the
/// measurement constraint, by ADMM: exact projection onto the affine set,
/// singular-value thresholding, scaled dual update, and a geometrically
/// annealed threshold.
///
/// With `noise_variance` set, the constraint becomes
/// `||X <T> - Y||_F^2 <= max(N p sigma^2, ||X T_ls - Y||_F^2)`.
pub fn recover_nuclear_norm(rd: &RegressionData, cfg: &RecoveryConfig) -> Result<Recovered> {
    cfg.validate()?;
    let svd = Svd::new(&rd.x);
    let t_ls = svd.pinv(PINV_RCOND) * &rd.y;
    let r = svd.numerical_rank(PINV_RCOND);
    let vr = svd.vt.rows(0, r).transpose();
    let r_ls2 = (&rd.x * &t_ls - &rd.y).norm_squared();
    let budget = cfg
        .noise_variance
        .filter(|s| *s > 0.0)
        .map(|s2| ((rd.n() * rd.p) as f64 * s2).max(r_ls2) - r_ls2);

    let project = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let v_par = &vr * vr.tr_mul(v);
        let w = &v_par - &t_ls;
        let theta = match budget {
            Some(b) => {
                let xw2 = (&rd.x * &w).norm_squared();
                if xw2 <= b {
                    1.0
                } else {
                    (b / xw2).sqrt()
                }
            }
            None => 0.0,
        };
        v - &v_par + &t_ls + w * theta
    };

    let mut t = project(&DMatrix::zeros(t_ls.nrows(), t_ls.ncols()));
    let scale = Svd::new(&balanced(rd, &t)).sigma_max();
    if scale == 0.0 {
        return Ok(Recovered {
            estimate: rd.as_tensor(&t),
            report: ls_report(rd, &rd.as_tensor(&t), Method::NuclearNorm)?,
        });
    }
    let mut tau = 0.5 * scale;
    let tau_min = 1e-3 * scale;
    let anneal = 0.9;
    let mut u = DMatrix::zeros(t.nrows(), t.ncols());
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let z = unbalanced(rd, &svt(&balanced(rd, &(&t + &u)), tau));
        let t_new = project(&(&z - &u));
        u += &t_new - &z;
        change = rel_change(&t_new, &t);
        let primal = (&t_new - &z).norm() / t_new.norm().max(f64::MIN_POSITIVE);
        t = t_new;
        if tau > tau_min {
            let next = (tau * anneal).max(tau_min);
            u *= next / tau;
            tau = next;
        } else if change < cfg.rel_tol && primal < cfg.rel_tol.sqrt() {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "nuclear-norm recovery (l = {}) stopped after {iterations} iterations, change {change:.2e}",
            rd.l
        );
    }
    let estimate = rd.as_tensor(&t);
    let rel_residual = rd.rel_residual(&estimate)?;
    Ok(Recovered {
        estimate,
        report: RecoveryReport {
            method: Method::NuclearNorm,
            length: rd.l,
            iterations,
            converged,
            rel_change: change,
            rel_residual,
        },
    })
}

/// Rank-`R` truncated SVD of the balanced matricization.
fn project_matrix_rank(rd: &RegressionData, hm: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let svd = Svd::new(&balanced(rd, hm)).truncate(rank);
    unbalanced(rd, &svd.reconstruct())
}

/// TT-SVD to rank `R` of the `(d, .., d, p)` tensor, densified.
fn project_tt_rank(rd: &RegressionData, hm: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let t = rd.as_tensor(hm);
    let tt = TtVector::svd(&t, rank, DEFAULT_TT_TOL)?;
    rd.as_matrix(&tt.to_dense())
}

/// Gram-based projected gradient iterations shared by IHT and TIHT.
fn projected_gradient(
    rd: &RegressionData,
    cfg: &RecoveryConfig,
    method: Method,
    project: &dyn Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    observer: &mut dyn FnMut(usize, &DenseTensor),
) -> Result<Recovered> {
    cfg.validate()?;
    let gram = rd.x.tr_mul(&rd.x);
    let b = rd.x.tr_mul(&rd.y);
    let yy = rd.y.norm_squared();
    let gamma = match cfg.step {
        Some(g) => g,
        None => {
            let lmax = spectral_norm_sq_of_gram(&gram);
            if lmax > 0.0 {
                1.0 / lmax
            } else {
                0.0
            }
        }
    };
    let mut h = DMatrix::zeros(rd.x.ncols(), rd.p);
    let mut prev_obj = f64::INFINITY;
    let mut increases = 0usize;
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let gh = &gram * &h;
        // ||XH - Y||^2 = tr(H^T G H) - 2 tr(H^T B) + ||Y||^2
        let obj = (h.dot(&gh) - 2.0 * h.dot(&b) + yy).max(0.0);
        if !obj.is_finite() {
            return Err(Error::Diverged {
                iterations: it,
                objective: obj,
            });
        }
        if obj > prev_obj * (1.0 + INCREASE_TOL) + 1e-300 {
            increases += 1;
            if increases >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged {
                    iterations: it,
                    objective: obj,
                });
            }
        } else {
            increases = 0;
        }
        prev_obj = obj;
        let step = &h + (&b - gh) * gamma;
        let h_new = project(&step)?;
        change = rel_change(&h_new, &h);
        h = h_new;
        observer(iterations, &rd.as_tensor(&h));
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    let estimate = rd.as_tensor(&h);
    let rel_residual = rd.rel_residual(&estimate)?;
    Ok(Recovered {
        estimate,
        report: RecoveryReport {
            method,
            length: rd.l,
            iterations,
            converged,
            rel_change: change,
            rel_residual,
        },
    })
}

/// Iterative hard thresholding with rank-`R` projection of `<H>_{ceil(l/2), .}`.
pub fn recover_iht(rd: &RegressionData, cfg: &RecoveryConfig) -> Result<Recovered> {
    let rank = cfg.rank;
    projected_gradient(
        rd,
        cfg,
        Method::Iht,
        &|m| Ok(project_matrix_rank(rd, m, rank)),
        &mut |_, _| {},
    )
}

/// Tensor IHT: the projection is TT-SVD to rank `R`.
pub fn recover_tiht(rd: &RegressionData, cfg: &RecoveryConfig) -> Result<Recovered> {
    recover_tiht_observed(rd, cfg, &mut |_, _| {})
}

/// [`recover_tiht`] calling `observer(k, H_k)` after every iteration.
pub fn recover_tiht_observed(
    rd: &RegressionData,
    cfg: &RecoveryConfig,
    observer: &mut dyn FnMut(usize, &DenseTensor),
) -> Result<Recovered> {
    let rank = cfg.rank;
    projected_gradient(rd, cfg, Method::Tiht, &|m| project_tt_rank(rd, m, rank), observer)
}

/// Runs the configured dense method.
pub fn recover(rd: &RegressionData, cfg: &RecoveryConfig) -> Result<Recovered> {
    match cfg.method {
        Method::LeastSquares => {
            let estimate = recover_least_squares(rd);
            let report = ls_report(rd, &estimate, Method::LeastSquares)?;
            Ok(Recovered { estimate, report })
        }
        Method::NuclearNorm => recover_nuclear_norm(rd, cfg),
        Method::Iht => recover_iht(rd, cfg),
        Method::Tiht => recover_tiht(rd, cfg),
        Method::TihtTt => Err(invalid("the TT method works on examples; use recover_tiht_tt")),
    }
}

/// Minibatch TIHT kept entirely in TT format: design TTs per minibatch,
/// gradient via TT contractions, TT rounding to rank `R`.
pub fn recover_tiht_tt(examples: &[Example], cfg: &RecoveryConfig) -> Result<RecoveredTt> {
    recover_tiht_tt_observed(examples, cfg, &mut |_, _| {})
}

/// [`recover_tiht_tt`] calling `observer(k, H_k)` after every iteration.
pub fn recover_tiht_tt_observed(
    examples: &[Example],
    cfg: &RecoveryConfig,
    observer: &mut dyn FnMut(usize, &TtVector),
) -> Result<RecoveredTt> {
    cfg.validate()?;
    let first = examples.first().ok_or_else(|| invalid("no examples"))?;
    let l = first.len();
    let p = first.y.len();
    if examples.iter().any(|e| e.len() != l || e.y.len() != p) {
        return Err(invalid("all examples must share length and output dimension"));
    }
    let n = examples.len();
    if l == 0 {
        let mut mean = vec![0.0; p];
        for e in examples {
            for (m, v) in mean.iter_mut().zip(&e.y) {
                *m += v / n as f64;
            }
        }
        let estimate = TtVector::from_cores(vec![TtCore::new(1, p, 1, mean)?])?;
        return Ok(RecoveredTt {
            estimate,
            report: RecoveryReport {
                method: Method::TihtTt,
                length: 0,
                iterations: 0,
                converged: true,
                rel_change: 0.0,
                rel_residual: 0.0,
            },
        });
    }
    let d = first.x[0].len();
    let m = cfg.minibatch.unwrap_or(n).min(n);
    let full_batch = m == n;
    let mut shape = vec![d; l];
    shape.push(p);
    let mut h = TtVector::zeros(&shape, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let all: Vec<&[Vec<f64>]> = examples.iter().map(|e| e.x.as_slice()).collect();
    let full_gamma = match cfg.step {
        Some(g) => Some(g),
        None if full_batch => Some(inverse_lmax(&batch_gram(&all))),
        None => None,
    };

    let mut prev_obj = f64::INFINITY;
    let mut increases = 0usize;
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut picked: Vec<&[Vec<f64>]> = Vec::with_capacity(m);
    let mut batch: Vec<&Example> = Vec::with_capacity(m);
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let seqs: &[&[Vec<f64>]] = if full_batch {
            batch.clear();
            batch.extend(examples.iter());
            &all
        } else {
            let idx = rand::seq::index::sample(&mut rng, n, m);
            batch.clear();
            batch.extend(idx.iter().map(|i| &examples[i]));
            picked.clear();
            picked.extend(batch.iter().map(|e| e.x.as_slice()));
            &picked
        };
        let mut gamma = match full_gamma {
            Some(g) => g,
            None => inverse_lmax(&batch_gram(seqs)),
        };
        if let (false, Some(tau)) = (full_batch, cfg.step_decay) {
            gamma /= 1.0 + it as f64 / tau;
        }
        let pred = batch_apply(seqs, &h)?;
        let mut resid = Vec::with_capacity(batch.len() * p);
        for (i, e) in batch.iter().enumerate() {
            for (o, y) in e.y.iter().enumerate() {
                resid.push(y - pred.get(&[i, o]));
            }
        }
        let obj: f64 = resid.iter().map(|r| r * r).sum();
        if !obj.is_finite() {
            return Err(Error::Diverged {
                iterations: it,
                objective: obj,
            });
        }
        if full_batch {
            if obj > prev_obj * (1.0 + INCREASE_TOL) + 1e-300 {
                increases += 1;
                if increases >= DIVERGENCE_PATIENCE {
                    return Err(Error::Diverged {
                        iterations: it,
                        objective: obj,
                    });
                }
            } else {
                increases = 0;
            }
            prev_obj = obj;
        }
        let resid = DenseTensor::new(vec![batch.len(), p], resid)?;
        let grad = batch_apply_adjoint(seqs, &resid)?;
        let h_new = h.add(&grad.scale(gamma))?.round(cfg.rank, DEFAULT_TT_TOL)?;
        let diff = h_new.sub(&h)?.norm();
        let den = h_new.norm().max(h.norm());
        change = if den > 0.0 { diff / den } else { 0.0 };
        h = h_new;
        observer(iterations, &h);
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    let rel_residual = tt_rel_residual(examples, &h)?;
    Ok(RecoveredTt {
        estimate: h,
        report: RecoveryReport {
            method: Method::TihtTt,
            length: l,
            iterations,
            converged,
            rel_change: change,
            rel_residual,
        },
    })
}

fn inverse_lmax(gram: &DMatrix<f64>) -> f64 {
    let lmax = spectral_norm_sq_of_gram(gram);
    if lmax > 0.0 {
        1.0 / lmax
    } else {
        0.0
    }
}

/// Residual over all examples, evaluated in chunks of TT contractions.
fn tt_rel_residual(examples: &[Example], h: &TtVector) -> Result<f64> {
    let mut r2 = 0.0;
    let mut y2 = 0.0;
    for chunk in examples.chunks(64) {
        let seqs: Vec<&[Vec<f64>]> = chunk.iter().map(|e| e.x.as_slice()).collect();
        let pred = batch_apply(&seqs, h)?;
        for (i, e) in chunk.iter().enumerate() {
            for (o, y) in e.y.iter().enumerate() {
                r2 += (y - pred.get(&[i, o])).powi(2);
                y2 += y * y;
            }
        }
    }
    Ok(if y2 > 0.0 { (r2 / y2).sqrt() } else { r2.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InputDist, SequenceDataset};
    use crate::model::Linear2RNN;

    fn dataset(model: &Linear2RNN, len: usize, count: usize, sigma2: f64, seed: u64) -> SequenceDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = |x: &[Vec<f64>]| model.evaluate(x).unwrap();
        crate::data::sample_dataset(&f, InputDist::Gaussian(model.d()), len, count, sigma2, &mut rng)
    }

    fn model(n: usize, d: usize, p: usize, seed: u64) -> Linear2RNN {
        Linear2RNN::random(n, d, p, 0.5, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn design_rows_are_kronecker() {
        let e = Example::new(vec![vec![1.0, 2.0], vec![3.0, -1.0]], vec![0.0]);
        let rd = build_design(&[e], 2).unwrap();
        assert_eq!(
            rd.x.row(0).iter().cloned().collect::<Vec<_>>(),
            vec![3.0, -1.0, 6.0, -2.0]
        );

        let onehot = Example::new(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], vec![0.0]);
        let rd = build_design(&[onehot], 3).unwrap();
        let nz: Vec<usize> = (0..9).filter(|&k| rd.x[(0, k)] != 0.0).collect();
        assert_eq!(nz, vec![5]);

        let mixed = [
            Example::new(vec![vec![1.0]], vec![0.0]),
            Example::new(vec![vec![1.0], vec![1.0]], vec![0.0]),
        ];
        assert!(build_design(&mixed, 1).is_err());
    }

    #[test]
    fn measurements_match_hankel() {
        let m = model(3, 2, 2, 1);
        let ds = dataset(&m, 3, 10, 0.0, 2);
        let rd = build_design(&ds.examples, 2).unwrap();
        let h = rd.as_matrix(&m.hankel_dense(3).unwrap()).unwrap();
        assert!((&rd.x * h - &rd.y).norm() < 1e-12);
    }

    #[test]
    fn least_squares_exact_when_determined() {
        let m = model(2, 2, 1, 3);
        let ds = dataset(&m, 3, 8, 0.0, 4);
        let rd = build_design(&ds.examples, 2).unwrap();
        let est = recover_least_squares(&rd);
        assert!(est.rel_error(&m.hankel_dense(3).unwrap()).unwrap() < 1e-8);
    }

    #[test]
    fn least_squares_zero_and_underdetermined() {
        let mut ds = dataset(&model(2, 3, 1, 5), 2, 4, 0.0, 6);
        let rd = build_design(&ds.examples, 3).unwrap();
        let est = recover_least_squares(&rd);
        assert!(rd.residual(&est).unwrap() < 1e-10);
        for e in &mut ds.examples {
            e.y = vec![0.0];
        }
        let rd = build_design(&ds.examples, 3).unwrap();
        assert_eq!(recover_least_squares(&rd).norm(), 0.0);
    }

    #[test]
    fn length_zero_is_the_mean() {
        let ex: Vec<Example> = [1.0, 2.0, 6.0].iter().map(|&y| Example::new(vec![], vec![y])).collect();
        let rd = build_design(&ex, 3).unwrap();
        assert_eq!(rd.x.shape(), (3, 1));
        assert!((recover_least_squares(&rd).data()[0] - 3.0).abs() < 1e-12);
        let tt = recover_tiht_tt(&ex, &RecoveryConfig::new(Method::TihtTt, 1)).unwrap();
        assert!((tt.estimate.to_dense().data()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn nuclear_norm_zero_data() {
        let mut ds = dataset(&model(2, 2, 1, 7), 2, 3, 0.0, 8);
        for e in &mut ds.examples {
            e.y = vec![0.0];
        }
        let rd = build_design(&ds.examples, 2).unwrap();
        let est = recover_nuclear_norm(&rd, &RecoveryConfig::new(Method::NuclearNorm, 1)).unwrap();
        assert_eq!(est.estimate.norm(), 0.0);
    }

    #[test]
    fn nuclear_norm_matches_ls_when_overdetermined() {
        let m = model(2, 2, 2, 9);
        let ds = dataset(&m, 3, 40, 0.0, 10);
        let rd = build_design(&ds.examples, 2).unwrap();
        let ls = recover_least_squares(&rd);
        let nn = recover_nuclear_norm(&rd, &RecoveryConfig::new(Method::NuclearNorm, 2)).unwrap();
        assert!(nn.estimate.rel_error(&ls).unwrap() < 1e-5);
    }

    #[test]
    fn nuclear_norm_recovers_low_rank_from_few_samples() {
        // rank-2 Hankel, 81 unknowns per output, 50 measurements
        let m = model(2, 3, 1, 11);
        let ds = dataset(&m, 4, 50, 0.0, 12);
        let rd = build_design(&ds.examples, 3).unwrap();
        let cfg = RecoveryConfig::new(Method::NuclearNorm, 2);
        let nn = recover_nuclear_norm(&rd, &cfg).unwrap();
        let truth = m.hankel_dense(4).unwrap();
        assert!(rd.rel_residual(&nn.estimate).unwrap() < 1e-6);
        assert!(
            nn.estimate.rel_error(&truth).unwrap() < 1e-3,
            "{}",
            nn.estimate.rel_error(&truth).unwrap()
        );
    }

    #[test]
    fn iht_and_tiht_match_ls_when_overdetermined() {
        let m = model(2, 2, 2, 13);
        let ds = dataset(&m, 3, 60, 0.0, 14);
        let rd = build_design(&ds.examples, 2).unwrap();
        let ls = recover_least_squares(&rd);
        for method in [Method::Iht, Method::Tiht] {
            let mut cfg = RecoveryConfig::new(method, 2);
            cfg.rel_tol = 1e-12;
            let r = recover(&rd, &cfg).unwrap();
            assert!(r.report.converged);
            assert!(r.estimate.rel_error(&ls).unwrap() < 1e-6, "{method}");
        }
    }

    #[test]
    fn zero_step_stays_at_zero() {
        let m = model(2, 2, 1, 15);
        let ds = dataset(&m, 2, 10, 0.0, 16);
        let rd = build_design(&ds.examples, 2).unwrap();
        let mut cfg = RecoveryConfig::new(Method::Iht, 2);
        cfg.step = Some(0.0);
        cfg.max_iters = 7;
        assert_eq!(recover(&rd, &cfg).unwrap().estimate.norm(), 0.0);
    }

    #[test]
    fn tiht_rank_one_exact() {
        let m = model(1, 2, 1, 17);
        let ds = dataset(&m, 3, 30, 0.0, 18);
        let rd = build_design(&ds.examples, 2).unwrap();
        let mut cfg = RecoveryConfig::new(Method::Tiht, 1);
        cfg.rel_tol = 1e-12;
        let r = recover_tiht(&rd, &cfg).unwrap();
        let err = r.estimate.rel_error(&m.hankel_dense(3).unwrap()).unwrap();
        assert!(err < 1e-8, "{err} {:?}", r.report);
    }

    #[test]
    fn projections_respect_rank_budget() {
        let m = model(3, 2, 2, 19);
        let ds = dataset(&m, 4, 12, 0.3, 20);
        let rd = build_design(&ds.examples, 2).unwrap();
        let mut cfg = RecoveryConfig::new(Method::Iht, 2);
        cfg.max_iters = 20;
        let iht = recover_iht(&rd, &cfg).unwrap();
        let bm = iht.estimate.unfold(2).unwrap();
        assert!(Svd::new(&bm).numerical_rank(1e-9) <= 2);
        let mut ranks_ok = true;
        recover_tiht_observed(&rd, &cfg, &mut |_, t| {
            ranks_ok &= TtVector::svd(t, 10, 1e-9).unwrap().max_rank() <= 2;
        })
        .unwrap();
        assert!(ranks_ok);
    }

    #[test]
    fn divergence_is_reported() {
        let m = model(2, 2, 1, 21);
        let ds = dataset(&m, 2, 20, 0.0, 22);
        let rd = build_design(&ds.examples, 2).unwrap();
        let mut cfg = RecoveryConfig::new(Method::Iht, 4);
        cfg.step = Some(10.0);
        assert!(matches!(recover(&rd, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn tt_full_batch_matches_dense_iterates() {
        let m = model(2, 2, 1, 23);
        let ds = dataset(&m, 3, 12, 0.1, 24);
        let rd = build_design(&ds.examples, 2).unwrap();
        let mut cfg = RecoveryConfig::new(Method::Tiht, 2);
        cfg.max_iters = 30;
        let mut dense = Vec::new();
        recover_tiht_observed(&rd, &cfg, &mut |_, t| dense.push(t.clone())).unwrap();
        let mut tt = Vec::new();
        recover_tiht_tt_observed(&ds.examples, &cfg, &mut |_, t| tt.push(t.to_dense())).unwrap();
        assert_eq!(dense.len(), tt.len());
        for (a, b) in dense.iter().zip(&tt) {
            assert!(a.sub(b).unwrap().norm() < 1e-6 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn tt_zero_data_gives_zero() {
        let ex: Vec<Example> = (0..5)
            .map(|i| Example::new(vec![vec![i as f64, 1.0]; 3], vec![0.0]))
            .collect();
        let r = recover_tiht_tt(&ex, &RecoveryConfig::new(Method::TihtTt, 2)).unwrap();
        assert_eq!(r.estimate.to_dense().norm(), 0.0);
    }

    #[test]
    fn tt_minibatch_recovers_noiseless() {
        let m = model(2, 2, 1, 25);
        let ds = dataset(&m, 3, 200, 0.0, 26);
        let mut cfg = RecoveryConfig::new(Method::TihtTt, 2);
        cfg.minibatch = Some(32);
        cfg.max_iters = 3000;
        cfg.seed = 3;
        let r = recover_tiht_tt(&ds.examples, &cfg).unwrap();
        let err = r.estimate.to_dense().rel_error(&m.hankel_dense(3).unwrap()).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn method_names_parse() {
        for m in [
            Method::LeastSquares,
            Method::NuclearNorm,
            Method::Iht,
            Method::Tiht,
            Method::TihtTt,
        ] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("sgd".parse::<Method>().is_err());
    }
}
