//! Spectral reconstruction of a linear 2-RNN from Hankel tensors.
//!
//! Given `<H^(2L)>_{L,L+1} = P S`, the model is
//! `alpha = (S^+)^T vec(H^(L))`, `Omega^T = P^+ <H^(L)>_{L,1}` and
//! `A = <H^(2L+1)>_{L,1,L+1} x_1 P^+ x_3 (S^+)^T`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{Svd, PINV_RCOND};
use crate::model::Linear2RNN;
use crate::recovery::{build_design, recover, recover_tiht_tt, Method, RecoveryConfig, RecoveryReport};
use crate::tensor::DenseTensor;
use crate::tt::{left_environment, left_orthogonalize, right_environment, right_orthogonalize, TtCore, TtVector};

/// Estimates of `H^(L)`, `H^(2L)` and `H^(2L+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelTriple {
    pub h_l: DenseTensor,
    pub h_2l: DenseTensor,
    pub h_2l1: DenseTensor,
    pub d: usize,
    pub p: usize,
    pub l: usize,
}

impl HankelTriple {
    pub fn new(h_l: DenseTensor, h_2l: DenseTensor, h_2l1: DenseTensor) -> Result<Self> {
        let l = h_l
            .order()
            .checked_sub(1)
            .filter(|&l| l >= 1)
            .ok_or_else(|| invalid("H^(L) needs L >= 1"))?;
        let d = h_l.shape()[0];
        let p = h_l.shape()[l];
        let expect = |k: usize| {
            let mut s = vec![d; k];
            s.push(p);
            s
        };
        if h_l.shape() != expect(l).as_slice()
            || h_2l.shape() != expect(2 * l).as_slice()
            || h_2l1.shape() != expect(2 * l + 1).as_slice()
        {
            return Err(mismatch(
                "Hankel shapes must be (d,..,d,p) with L, 2L and 2L+1 input modes",
            ));
        }
        Ok(Self {
            h_l,
            h_2l,
            h_2l1,
            d,
            p,
            l,
        })
    }

    pub fn from_model(m: &Linear2RNN, l: usize) -> Result<Self> {
        Self::new(m.hankel_dense(l)?, m.hankel_dense(2 * l)?, m.hankel_dense(2 * l + 1)?)
    }
}

/// Singular spectrum of the factorized Hankel matricization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    pub requested_rank: usize,
    /// Singular values above `1e-10 * sigma_max`.
    pub numerical_rank: usize,
    pub singular_values: Vec<f64>,
    /// Set when the numerical rank differs from the requested rank.
    pub warning: bool,
}

impl RankDiagnostics {
    fn from_svd(svd: &Svd, rank: usize, what: &str) -> Self {
        let numerical_rank = svd.numerical_rank(PINV_RCOND);
        let warning = numerical_rank != rank;
        if warning {
            log::warn!(
                "{what} has numerical rank {numerical_rank} but rank {rank} was requested; \
                 the recovered model may not compute the target"
            );
        }
        Self {
            requested_rank: rank,
            numerical_rank,
            singular_values: svd.s.iter().cloned().collect(),
            warning,
        }
    }
}

/// Truncated SVD factorization `P = U_R`, `S = Sigma_R V_R^T` of `<H^(2L)>_{L,L+1}`.
pub fn rank_factorize(
    h_2l: &DenseTensor,
    l: usize,
    rank: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, RankDiagnostics)> {
    if rank == 0 {
        return Err(invalid("rank must be >= 1"));
    }
    if h_2l.order() != 2 * l + 1 {
        return Err(mismatch(format!("H^(2L) must have order {}", 2 * l + 1)));
    }
    let svd = Svd::new(&h_2l.unfold(l)?);
    let diag = RankDiagnostics::from_svd(&svd, rank, "<H^(2L)>_{L,L+1}");
    let (p, s) = split_factors(&svd.truncate(rank));
    Ok((p, s, diag))
}

fn split_factors(svd: &Svd) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut s = svd.vt.clone();
    for (j, sv) in svd.s.iter().enumerate() {
        s.row_mut(j).scale_mut(*sv);
    }
    (svd.u.clone(), s)
}

fn check_finite(m: &Linear2RNN) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::IllConditioned("recovered parameters are not finite".into()))
    }
}

/// Pseudo-inverse of `P`, which must have full column rank.
fn pinv_full_column_rank(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = Svd::new(p);
    let r = svd.numerical_rank(PINV_RCOND);
    if r < p.ncols() {
        return Err(Error::IllConditioned(format!(
            "P has numerical rank {r} < {} columns",
            p.ncols()
        )));
    }
    Ok(svd.pinv(PINV_RCOND))
}

/// Model from the three Hankel estimates and a factorization `<H^(2L)>_{L,L+1} = P S`.
pub fn recover_rnn(t: &HankelTriple, p: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Linear2RNN> {
    let rows = t.d.pow(t.l as u32);
    let cols = rows * t.p;
    let r = p.ncols();
    if p.nrows() != rows || s.shape() != (r, cols) {
        return Err(mismatch(format!(
            "factors must be {rows} x R and R x {cols}, got {:?} and {:?}",
            p.shape(),
            s.shape()
        )));
    }
    let p_pinv = pinv_full_column_rank(p)?;
    let s_pinv_t = Svd::new(s).pinv(PINV_RCOND).transpose();
    let alpha = &s_pinv_t * DVector::from_column_slice(t.h_l.data());
    let omega_t = &p_pinv * t.h_l.unfold(t.l)?;
    let a = t
        .h_2l1
        .reshape(&[rows, t.d, cols])?
        .mode_matrix_product(&p_pinv, 0)?
        .mode_matrix_product(&s_pinv_t, 2)?;
    let m = Linear2RNN::new(alpha.iter().cloned().collect(), a, omega_t.transpose())?;
    check_finite(&m)?;
    Ok(m)
}

/// Pads a model with inert states (zero weights) up to hidden size `rank`.
fn pad_to_rank(m: Linear2RNN, rank: usize) -> Linear2RNN {
    let n = m.n();
    if n >= rank {
        return m;
    }
    let (d, p) = (m.d(), m.p());
    let mut h0 = m.h0().to_vec();
    h0.resize(rank, 0.0);
    let a = DenseTensor::from_fn(&[rank, d, rank], |ix| {
        if ix[0] < n && ix[2] < n {
            m.a().get(&[ix[0], ix[1], ix[2]])
        } else {
            0.0
        }
    });
    let omega = DMatrix::from_fn(p, rank, |o, k| if k < n { m.omega()[(o, k)] } else { 0.0 });
    Linear2RNN::new(h0, a, omega).expect("consistent shapes")
}

/// Dense route: factorize `H^(2L)` to rank `R`, then apply the recovery formulas.
pub fn recover_from_hankels(t: &HankelTriple, rank: usize) -> Result<(Linear2RNN, RankDiagnostics)> {
    let (p, s, diag) = rank_factorize(&t.h_2l, t.l, rank)?;
    let m = recover_rnn(t, &p, &s)?;
    Ok((pad_to_rank(m, rank), diag))
}

/// TT route: the same formulas evaluated by core contractions, never densifying.
///
/// `<H^(2L)>_{L,L+1}` is brought to the form `Q B W` with `Q` left-orthogonal
/// (first `L` cores) and `W` right-orthogonal (last `L+1` cores); the SVD of the
/// small bond matrix `B` gives `P = Q U_R` and `S = Sigma_R V_R^T W`.
pub fn recover_from_tt(
    h_l: &TtVector,
    h_2l: &TtVector,
    h_2l1: &TtVector,
    rank: usize,
) -> Result<(Linear2RNN, RankDiagnostics)> {
    if rank == 0 {
        return Err(invalid("rank must be >= 1"));
    }
    let l = h_l
        .order()
        .checked_sub(1)
        .filter(|&l| l >= 1)
        .ok_or_else(|| invalid("H^(L) needs L >= 1"))?;
    if h_2l.order() != 2 * l + 1 || h_2l1.order() != 2 * l + 2 {
        return Err(mismatch("TT Hankels must have L, 2L and 2L+1 input modes"));
    }
    let d = h_l.shape()[0];
    let p = h_l.shape()[l];

    let mut cores = h_2l.cores().to_vec();
    right_orthogonalize(&mut cores, l - 1);
    left_orthogonalize(&mut cores, l - 1);
    let pivot = &cores[l - 1];
    let (q, bond) = crate::linalg::thin_qr(&pivot.left_unfolding());
    cores[l - 1] = TtCore::new(pivot.left, pivot.mode, q.ncols(), crate::tt::row_major(&q))?;
    let left = &cores[..l];
    let right = &cores[l..];

    let svd = Svd::new(&bond);
    let diag = RankDiagnostics::from_svd(&svd, rank, "<H^(2L)>_{L,L+1}");
    let tr = svd.truncate(rank);
    let r = tr.s.len();
    let cutoff = PINV_RCOND * svd.sigma_max();
    // (S^+)^T = Sigma^+ V^T W
    let mut sigma_inv_vt = tr.vt.clone();
    for (j, sv) in tr.s.iter().enumerate() {
        let inv = if *sv > cutoff && *sv > 0.0 { 1.0 / sv } else { 0.0 };
        sigma_inv_vt.row_mut(j).scale_mut(inv);
    }
    let ut = tr.u.transpose();

    // alpha = Sigma^+ V^T (W vec(H^(L)))
    let w_h = right_environment(right, h_l.cores());
    let alpha = &sigma_inv_vt * &w_h;

    // Omega^T = U^T Q^T <H^(L)>_{L,1}
    let hl_cores = h_l.cores();
    let env = left_environment(left, &hl_cores[..l]);
    let out_core = &hl_cores[l];
    let out = DMatrix::from_fn(out_core.left, p, |a, o| out_core.get(a, o, 0));
    let omega_t = &ut * env * out;

    // A[:, sigma, :] = U^T (Q^T K_{<=L}) K_{L+1}[:, sigma, :] (K_{>L+1} W^T) V Sigma^+
    let k = h_2l1.cores();
    let lenv = &ut * left_environment(left, &k[..l]);
    let renv = right_environment(&k[l + 1..], right) * sigma_inv_vt.transpose();
    let mid = &k[l];
    let mut a = DenseTensor::zeros(&[r, d, r]);
    for sigma in 0..d {
        let slice = &lenv * mid.slice(sigma) * &renv;
        for i in 0..r {
            for j in 0..r {
                a.set(&[i, sigma, j], slice[(i, j)]);
            }
        }
    }
    let m = Linear2RNN::new(alpha.iter().cloned().collect(), a, omega_t.transpose())?;
    check_finite(&m)?;
    Ok((pad_to_rank(m, rank), diag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub l: usize,
    pub recovery: RecoveryConfig,
    /// Return the zero model when it beats the hypothesis on training data.
    #[serde(default = "default_true")]
    pub zero_fallback: bool,
}

fn default_true() -> bool {
    true
}

impl SpectralConfig {
    pub fn new(l: usize, recovery: RecoveryConfig) -> Self {
        Self {
            l,
            recovery,
            zero_fallback: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Learned {
    pub model: Linear2RNN,
    pub reports: Vec<RecoveryReport>,
    pub diagnostics: RankDiagnostics,
    /// The zero model replaced the hypothesis.
    pub fallback: bool,
    /// Training MSE of the returned model over all training examples.
    pub train_mse: f64,
}

fn dims(datasets: &[&[Example]]) -> Result<(usize, usize)> {
    let d = datasets
        .iter()
        .flat_map(|ds| ds.iter())
        .find_map(|e| e.x.first().map(|x| x.len()))
        .ok_or_else(|| invalid("datasets contain no inputs"))?;
    let p = datasets
        .iter()
        .flat_map(|ds| ds.iter())
        .map(|e| e.y.len())
        .next()
        .ok_or_else(|| invalid("datasets are empty"))?;
    Ok((d, p))
}

fn check_length(ds: &[Example], l: usize) -> Result<()> {
    if ds.is_empty() {
        return Err(invalid(format!("no examples of length {l}")));
    }
    if ds.iter().any(|e| e.len() != l) {
        return Err(invalid(format!("dataset for length {l} has other lengths")));
    }
    Ok(())
}

/// Mean squared error of the constant-zero predictor.
pub fn zero_mse(examples: &[Example]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for e in examples {
        total += e.y.iter().map(|v| v * v).sum::<f64>();
        count += e.y.len();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Replaces `m` by the zero model if its training MSE exceeds the zero predictor's.
pub fn apply_zero_fallback(m: Linear2RNN, train: &[Example]) -> Result<(Linear2RNN, bool, f64)> {
    let mse = m.mse(train)?;
    let zero = zero_mse(train);
    if !mse.is_finite() || mse > zero {
        log::info!("hypothesis training MSE {mse:.4e} exceeds zero predictor's {zero:.4e}; returning zero model");
        Ok((Linear2RNN::zeros(m.n(), m.d(), m.p()), true, zero))
    } else {
        Ok((m, false, mse))
    }
}

fn finish(
    model: Linear2RNN,
    reports: Vec<RecoveryReport>,
    diagnostics: RankDiagnostics,
    train: Vec<Example>,
    cfg: &SpectralConfig,
) -> Result<Learned> {
    let (model, fallback, train_mse) = if cfg.zero_fallback {
        apply_zero_fallback(model, &train)?
    } else {
        let mse = model.mse(&train)?;
        (model, false, mse)
    };
    Ok(Learned {
        model,
        reports,
        diagnostics,
        fallback,
        train_mse,
    })
}

/// Recovery of `H^(L)`, `H^(2L)`, `H^(2L+1)` from `datasets = [D_L, D_2L, D_2L+1]`
/// followed by spectral reconstruction.
pub fn spectral_learn(datasets: &[Vec<Example>], cfg: &SpectralConfig) -> Result<Learned> {
    let l = cfg.l;
    if l == 0 {
        return Err(invalid("L must be >= 1"));
    }
    if datasets.len() != 3 {
        return Err(invalid("expected datasets for lengths L, 2L and 2L+1"));
    }
    for (ds, len) in datasets.iter().zip([l, 2 * l, 2 * l + 1]) {
        check_length(ds, len)?;
    }
    let refs: Vec<&[Example]> = datasets.iter().map(|d| d.as_slice()).collect();
    let (d, _) = dims(&refs)?;
    let rank = cfg.recovery.rank;
    let mut reports = Vec::with_capacity(3);
    let (model, diag) = if cfg.recovery.method == Method::TihtTt {
        let mut tts = Vec::with_capacity(3);
        for ds in datasets {
            let r = recover_tiht_tt(ds, &cfg.recovery)?;
            reports.push(r.report);
            tts.push(r.estimate);
        }
        recover_from_tt(&tts[0], &tts[1], &tts[2], rank)?
    } else {
        let mut hs = Vec::with_capacity(3);
        for ds in datasets {
            let rd = build_design(ds, d)?;
            let r = recover(&rd, &cfg.recovery)?;
            reports.push(r.report);
            hs.push(r.estimate);
        }
        let h_2l1 = hs.pop().expect("three");
        let h_2l = hs.pop().expect("three");
        let h_l = hs.pop().expect("three");
        recover_from_hankels(&HankelTriple::new(h_l, h_2l, h_2l1)?, rank)?
    };
    let train: Vec<Example> = datasets.iter().flatten().cloned().collect();
    finish(model, reports, diag, train, cfg)
}

/// Words of length `<= L` in length-then-lexicographic order.
pub fn basis_words(d: usize, l: usize, include_empty: bool) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![vec![]];
    if include_empty {
        out.push(vec![]);
    }
    for _ in 0..l {
        layer = layer
            .iter()
            .flat_map(|w| {
                (0..d).map(move |s| {
                    let mut w2 = w.clone();
                    w2.push(s);
                    w2
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Prefix/suffix-closed Hankel blocks over the basis `P = S`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralHankelBlocks {
    pub basis: Vec<Vec<usize>>,
    /// `|P| x (|S| p)`: `f(uv)`.
    pub h_tilde: DMatrix<f64>,
    /// `(|P|, d, |S| p)`: `f(u sigma v)`.
    pub h_plus: DenseTensor,
    /// `|P| x p`: `f(u)`.
    pub h_minus: DMatrix<f64>,
    pub d: usize,
    pub p: usize,
}

/// Assembles the blocks from dense `H^(l)` estimates indexed by length.
/// `hankels[l]` may be `None` only for lengths the basis never touches.
pub fn general_blocks(
    hankels: &[Option<DenseTensor>],
    d: usize,
    p: usize,
    l: usize,
    include_empty: bool,
) -> Result<GeneralHankelBlocks> {
    let basis = basis_words(d, l, include_empty);
    let lookup = |word: &[usize], o: usize| -> Result<f64> {
        let h = hankels
            .get(word.len())
            .and_then(|h| h.as_ref())
            .ok_or_else(|| invalid(format!("missing Hankel estimate for length {}", word.len())))?;
        let mut idx = 0usize;
        for &s in word {
            idx = idx * d + s;
        }
        Ok(h.data()[idx * p + o])
    };
    let nb = basis.len();
    let mut h_tilde = DMatrix::zeros(nb, nb * p);
    let mut h_plus = DenseTensor::zeros(&[nb, d, nb * p]);
    let mut h_minus = DMatrix::zeros(nb, p);
    let mut word = Vec::with_capacity(2 * l + 1);
    for (i, u) in basis.iter().enumerate() {
        for o in 0..p {
            h_minus[(i, o)] = lookup(u, o)?;
        }
        for (j, v) in basis.iter().enumerate() {
            word.clear();
            word.extend_from_slice(u);
            word.extend_from_slice(v);
            for o in 0..p {
                h_tilde[(i, j * p + o)] = lookup(&word, o)?;
            }
            for sigma in 0..d {
                word.clear();
                word.extend_from_slice(u);
                word.push(sigma);
                word.extend_from_slice(v);
                for o in 0..p {
                    h_plus.set(&[i, sigma, j * p + o], lookup(&word, o)?);
                }
            }
        }
    }
    Ok(GeneralHankelBlocks {
        basis,
        h_tilde,
        h_plus,
        h_minus,
        d,
        p,
    })
}

/// Reconstruction over the lifted basis: `H~` replaces `<H^(2L)>_{L,L+1}`,
/// `H~+` the `(2L+1)` tensor, and `H~-` both `H^(L)` reshapings.
pub fn recover_general(blocks: &GeneralHankelBlocks, rank: usize) -> Result<(Linear2RNN, RankDiagnostics)> {
    if rank == 0 {
        return Err(invalid("rank must be >= 1"));
    }
    let svd = Svd::new(&blocks.h_tilde);
    let diag = RankDiagnostics::from_svd(&svd, rank, "lifted Hankel block");
    let (p, s) = split_factors(&svd.truncate(rank));
    let p_pinv = pinv_full_column_rank(&p)?;
    let s_pinv_t = Svd::new(&s).pinv(PINV_RCOND).transpose();
    // vec over (suffix, output) of f(v)
    let h_minus_vec: Vec<f64> = (0..blocks.h_minus.nrows())
        .flat_map(|j| (0..blocks.p).map(move |o| (j, o)))
        .map(|(j, o)| blocks.h_minus[(j, o)])
        .collect();
    let alpha = &s_pinv_t * DVector::from_vec(h_minus_vec);
    let omega_t = &p_pinv * &blocks.h_minus;
    let a = blocks
        .h_plus
        .mode_matrix_product(&p_pinv, 0)?
        .mode_matrix_product(&s_pinv_t, 2)?;
    let m = Linear2RNN::new(alpha.iter().cloned().collect(), a, omega_t.transpose())?;
    check_finite(&m)?;
    Ok((pad_to_rank(m, rank), diag))
}

/// General algorithm: `datasets[l]` holds examples of length `l` for `l = 0..=2L+1`
/// (`datasets[0]` may be empty, which drops the empty word from the basis).
pub fn spectral_learn_general(datasets: &[Vec<Example>], cfg: &SpectralConfig) -> Result<Learned> {
    let l = cfg.l;
    if l == 0 {
        return Err(invalid("L must be >= 1"));
    }
    if datasets.len() != 2 * l + 2 {
        return Err(invalid(format!("expected datasets for lengths 0..={}", 2 * l + 1)));
    }
    let include_empty = !datasets[0].is_empty();
    let first = if include_empty { 0 } else { 1 };
    for (len, ds) in datasets.iter().enumerate().skip(first) {
        check_length(ds, len)?;
    }
    let refs: Vec<&[Example]> = datasets.iter().map(|d| d.as_slice()).collect();
    let (d, p) = dims(&refs)?;
    let mut hankels: Vec<Option<DenseTensor>> = vec![None; 2 * l + 2];
    let mut reports = Vec::new();
    for (len, ds) in datasets.iter().enumerate().skip(first) {
        let estimate = if cfg.recovery.method == Method::TihtTt {
            let r = recover_tiht_tt(ds, &cfg.recovery)?;
            reports.push(r.report);
            r.estimate.to_dense()
        } else {
            let r = recover(&build_design(ds, d)?, &cfg.recovery)?;
            reports.push(r.report);
            r.estimate
        };
        hankels[len] = Some(estimate);
    }
    let blocks = general_blocks(&hankels, d, p, l, include_empty)?;
    let (model, diag) = recover_general(&blocks, cfg.recovery.rank)?;
    let train: Vec<Example> = datasets.iter().flatten().cloned().collect();
    finish(model, reports, diag, train, cfg)
}

/// Splits sequences with per-step outputs into `D_l = {(x_1..x_l, y_l)}` for each `l`.
pub fn per_step_datasets(examples: &[Example], lengths: &[usize]) -> Result<Vec<Vec<Example>>> {
    let need = lengths.iter().cloned().max().unwrap_or(0);
    let mut out = vec![Vec::with_capacity(examples.len()); lengths.len()];
    for (i, e) in examples.iter().enumerate() {
        let ys =
            e.ys.as_ref()
                .ok_or_else(|| invalid(format!("example {i} has no per-step outputs")))?;
        if e.len() < need {
            return Err(invalid(format!("example {i} has length {} < {need}", e.len())));
        }
        for (slot, &l) in out.iter_mut().zip(lengths) {
            if l == 0 {
                return Err(invalid("per-step outputs do not include the empty prefix"));
            }
            slot.push(Example::new(e.x[..l].to_vec(), ys[l - 1].clone()));
        }
    }
    Ok(out)
}
