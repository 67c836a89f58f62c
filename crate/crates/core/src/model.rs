//! Linear second-order RNNs and vector-valued weighted automata.
//!
//! The state update is `h_t[k] = sum_{i,j} h_{t-1}[i] x_t[j] A[i, j, k]` with
//! `A` of shape `(n, d, n)`, and the output is `y = Omega h_t`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::Svd;
use crate::tensor::DenseTensor;
use crate::tt::{TtCore, TtVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct Linear2RNN {
    h0: Vec<f64>,
    a: DenseTensor,
    omega: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    n: usize,
    d: usize,
    p: usize,
    h0: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "Omega")]
    omega: Vec<Vec<f64>>,
}

impl From<Linear2RNN> for ModelJson {
    fn from(m: Linear2RNN) -> Self {
        let omega = (0..m.p()).map(|o| m.omega.row(o).iter().cloned().collect()).collect();
        ModelJson {
            n: m.n(),
            d: m.d(),
            p: m.p(),
            h0: m.h0,
            a: m.a.into_data(),
            omega,
        }
    }
}

impl TryFrom<ModelJson> for Linear2RNN {
    type Error = Error;

    fn try_from(j: ModelJson) -> Result<Self> {
        if j.omega.len() != j.p || j.omega.iter().any(|r| r.len() != j.n) {
            return Err(mismatch(format!("Omega must be {}x{}", j.p, j.n)));
        }
        let flat: Vec<f64> = j.omega.into_iter().flatten().collect();
        let omega = DMatrix::from_row_slice(j.p, j.n, &flat);
        let a = DenseTensor::new(vec![j.n, j.d, j.n], j.a)?;
        Linear2RNN::new(j.h0, a, omega)
    }
}

impl Linear2RNN {
    pub fn new(h0: Vec<f64>, a: DenseTensor, omega: DMatrix<f64>) -> Result<Self> {
        let n = h0.len();
        match a.shape() {
            &[n1, d, n2] if n1 == n && n2 == n && d > 0 => {}
            s => return Err(mismatch(format!("A must have shape ({n}, d, {n}), got {s:?}"))),
        }
        if omega.ncols() != n || omega.nrows() == 0 {
            return Err(mismatch(format!(
                "Omega must be p x {n}, got {}x{}",
                omega.nrows(),
                omega.ncols()
            )));
        }
        Ok(Self { h0, a, omega })
    }

    pub fn zeros(n: usize, d: usize, p: usize) -> Self {
        Self {
            h0: vec![0.0; n],
            a: DenseTensor::zeros(&[n, d, n]),
            omega: DMatrix::zeros(p, n),
        }
    }

    /// Entries of `h0`, `A` and `Omega` drawn i.i.d. from `N(0, scale^2)`.
    pub fn random(n: usize, d: usize, p: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut draw = |len: usize| -> Vec<f64> {
            if scale == 0.0 {
                return vec![0.0; len];
            }
            let dist = Normal::new(0.0, scale).expect("finite scale");
            (0..len).map(|_| dist.sample(rng)).collect()
        };
        let h0 = draw(n);
        let a = DenseTensor::new(vec![n, d, n], draw(n * d * n)).expect("shape");
        let omega = DMatrix::from_row_slice(p, n, &draw(p * n));
        Self { h0, a, omega }
    }

    pub fn n(&self) -> usize {
        self.h0.len()
    }

    pub fn d(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn p(&self) -> usize {
        self.omega.nrows()
    }

    pub fn h0(&self) -> &[f64] {
        &self.h0
    }

    pub fn a(&self) -> &DenseTensor {
        &self.a
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn num_parameters(&self) -> usize {
        self.h0.len() + self.a.len() + self.omega.len()
    }

    /// `A[:, sigma, :]` as an `n x n` matrix.
    pub fn transition(&self, sigma: usize) -> DMatrix<f64> {
        let (n, d) = (self.n(), self.d());
        let data = self.a.data();
        DMatrix::from_fn(n, n, |i, k| data[(i * d + sigma) * n + k])
    }

    /// `M_x[i, k] = sum_j x[j] A[i, j, k]`, so that `h_t = M_x^T h_{t-1}`.
    fn input_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let (n, d) = (self.n(), self.d());
        let data = self.a.data();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, &xj) in x.iter().enumerate() {
                if xj == 0.0 {
                    continue;
                }
                let base = (i * d + j) * n;
                for k in 0..n {
                    m[(i, k)] += xj * data[base + k];
                }
            }
        }
        m
    }

    fn check_inputs(&self, xs: &[Vec<f64>]) -> Result<()> {
        let d = self.d();
        if let Some((t, x)) = xs.iter().enumerate().find(|(_, x)| x.len() != d) {
            return Err(mismatch(format!("input {t} has length {}, expected {d}", x.len())));
        }
        Ok(())
    }

    pub fn step(&self, h: &[f64], x: &[f64]) -> Vec<f64> {
        let (n, d) = (self.n(), self.d());
        let data = self.a.data();
        let mut out = vec![0.0; n];
        for (i, &hi) in h.iter().enumerate() {
            if hi == 0.0 {
                continue;
            }
            for (j, &xj) in x.iter().enumerate() {
                let w = hi * xj;
                if w == 0.0 {
                    continue;
                }
                let base = (i * d + j) * n;
                for (k, o) in out.iter_mut().enumerate() {
                    *o += w * data[base + k];
                }
            }
        }
        out
    }

    /// Hidden states `h_0, .., h_k`.
    pub fn states(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(xs)?;
        let mut hs = Vec::with_capacity(xs.len() + 1);
        hs.push(self.h0.clone());
        for x in xs {
            let next = self.step(hs.last().expect("non-empty"), x);
            hs.push(next);
        }
        Ok(hs)
    }

    pub fn output(&self, h: &[f64]) -> Vec<f64> {
        (0..self.p())
            .map(|o| self.omega.row(o).iter().zip(h).map(|(w, v)| w * v).sum())
            .collect()
    }

    pub fn evaluate(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_inputs(xs)?;
        let mut h = self.h0.clone();
        for x in xs {
            h = self.step(&h, x);
        }
        Ok(self.output(&h))
    }

    /// Outputs after every step `1..=k`.
    pub fn evaluate_steps(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.states(xs)?[1..].iter().map(|h| self.output(h)).collect())
    }

    /// Mean squared error over output coordinates and examples, final outputs only.
    pub fn mse(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for ex in examples {
            let y = self.evaluate(&ex.x)?;
            if y.len() != ex.y.len() {
                return Err(mismatch("target dimension differs from model output"));
            }
            total += y.iter().zip(&ex.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count += y.len();
        }
        Ok(total / count as f64)
    }

    /// `(P^{-T} h0, A x_1 P x_3 P^{-T}, Omega P^T)`: same function, new state basis.
    pub fn change_of_basis(&self, p: &DMatrix<f64>) -> Result<Self> {
        let n = self.n();
        if p.shape() != (n, n) {
            return Err(mismatch(format!("basis change must be {n}x{n}")));
        }
        let svd = Svd::new(p);
        let smin = svd.s.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(smin > 1e-12 * svd.sigma_max()) {
            return Err(invalid("basis change matrix is singular"));
        }
        let inv_t = p
            .clone()
            .try_inverse()
            .ok_or_else(|| invalid("basis change matrix is singular"))?
            .transpose();
        let h0 = (&inv_t * nalgebra::DVector::from_column_slice(&self.h0))
            .iter()
            .cloned()
            .collect();
        let a = self.a.mode_matrix_product(p, 0)?.mode_matrix_product(&inv_t, 2)?;
        let omega = &self.omega * p.transpose();
        Self::new(h0, a, omega)
    }

    /// `H^(l) = TT[A •1 h0, A, .., A, Omega^T]`, shape `(d, .., d, p)`, ranks <= n.
    pub fn hankel(&self, l: usize) -> Result<TtVector> {
        if l == 0 {
            return Err(invalid("hankel TT needs l >= 1; use hankel_dense for l = 0"));
        }
        let (n, d, p) = (self.n(), self.d(), self.p());
        let first = self.a.mode_vector_product(&self.h0, 0)?;
        let mut cores = Vec::with_capacity(l + 1);
        cores.push(TtCore::new(1, d, n, first.into_data())?);
        for _ in 1..l {
            cores.push(TtCore::new(n, d, n, self.a.data().to_vec())?);
        }
        let mut last = TtCore::zeros(n, p, 1);
        for k in 0..n {
            for o in 0..p {
                last.set(k, o, 0, self.omega[(o, k)]);
            }
        }
        cores.push(last);
        TtVector::from_cores(cores)
    }

    /// Dense `H^(l)`; for `l = 0` this is the order-1 tensor `Omega h0`.
    pub fn hankel_dense(&self, l: usize) -> Result<DenseTensor> {
        if l == 0 {
            return DenseTensor::new(vec![self.p()], self.output(&self.h0));
        }
        Ok(self.hankel(l)?.to_dense())
    }

    pub fn to_wfa(&self) -> VvWFA {
        VvWFA {
            alpha: self.h0.clone(),
            transitions: (0..self.d()).map(|s| self.transition(s)).collect(),
            omega: self.omega.clone(),
        }
    }

    pub fn from_wfa(w: &VvWFA) -> Self {
        let (n, d) = (w.n(), w.d());
        let a = DenseTensor::from_fn(&[n, d, n], |ix| w.transitions[ix[1]][(ix[0], ix[2])]);
        Self {
            h0: w.alpha.clone(),
            a,
            omega: w.omega.clone(),
        }
    }

    /// Gradients of the mean squared error over all available outputs
    /// (per-step targets when present, otherwise the final output).
    pub fn gradients(&self, batch: &[Example]) -> Result<Gradients> {
        let (n, d, p) = (self.n(), self.d(), self.p());
        let mut g = Gradients::zeros(n, d, p);
        let terms: usize = batch.iter().map(output_terms).sum();
        if terms == 0 {
            return Ok(g);
        }
        let c = 2.0 / (terms * p) as f64;
        let mut loss = 0.0;
        for ex in batch {
            let hs = self.states(&ex.x)?;
            let k = ex.x.len();
            // dL/dh_t from the output at step t
            let mut direct: Vec<Option<Vec<f64>>> = vec![None; k + 1];
            for (t, y) in targets(ex) {
                if y.len() != p {
                    return Err(mismatch("target dimension differs from model output"));
                }
                let out = self.output(&hs[t]);
                let r: Vec<f64> = out.iter().zip(y).map(|(a, b)| a - b).collect();
                loss += r.iter().map(|v| v * v).sum::<f64>();
                for o in 0..p {
                    for (kk, hk) in hs[t].iter().enumerate() {
                        g.omega[(o, kk)] += c * r[o] * hk;
                    }
                }
                let mut back = vec![0.0; n];
                for (kk, b) in back.iter_mut().enumerate() {
                    *b = c * (0..p).map(|o| self.omega[(o, kk)] * r[o]).sum::<f64>();
                }
                direct[t] = Some(back);
            }
            let mut gh = vec![0.0; n];
            for t in (1..=k).rev() {
                if let Some(v) = &direct[t] {
                    for (a, b) in gh.iter_mut().zip(v) {
                        *a += b;
                    }
                }
                let x = &ex.x[t - 1];
                let h_prev = &hs[t - 1];
                let ga = g.a.data_mut();
                for (i, &hi) in h_prev.iter().enumerate() {
                    for (j, &xj) in x.iter().enumerate() {
                        let w = hi * xj;
                        if w == 0.0 {
                            continue;
                        }
                        let base = (i * d + j) * n;
                        for (kk, &gk) in gh.iter().enumerate() {
                            ga[base + kk] += w * gk;
                        }
                    }
                }
                let m = self.input_matrix(x);
                gh = (&m * nalgebra::DVector::from_column_slice(&gh))
                    .iter()
                    .cloned()
                    .collect();
            }
            if let Some(v) = &direct[0] {
                for (a, b) in gh.iter_mut().zip(v) {
                    *a += b;
                }
            }
            for (a, b) in g.h0.iter_mut().zip(&gh) {
                *a += b;
            }
        }
        g.loss = loss / (terms * p) as f64;
        Ok(g)
    }

    /// Mean squared error over all available outputs, matching [`Self::gradients`].
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        let mut total = 0.0;
        let mut terms = 0usize;
        for ex in batch {
            let hs = self.states(&ex.x)?;
            for (t, y) in targets(ex) {
                let out = self.output(&hs[t]);
                total += out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                terms += 1;
            }
        }
        if terms == 0 {
            return Ok(0.0);
        }
        Ok(total / (terms * self.p()) as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Adds `scale * delta` to every parameter.
    pub fn axpy(&mut self, scale: f64, delta: &Gradients) {
        for (a, b) in self.h0.iter_mut().zip(&delta.h0) {
            *a += scale * b;
        }
        for (a, b) in self.a.data_mut().iter_mut().zip(delta.a.data()) {
            *a += scale * b;
        }
        self.omega += &delta.omega * scale;
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [f64]; 3] {
        [self.h0.as_mut_slice(), self.a.data_mut(), self.omega.as_mut_slice()]
    }

    pub fn is_finite(&self) -> bool {
        self.h0
            .iter()
            .chain(self.a.data())
            .chain(self.omega.iter())
            .all(|v| v.is_finite())
    }
}

fn output_terms(e: &Example) -> usize {
    match &e.ys {
        Some(ys) => ys.len(),
        None => 1,
    }
}

/// `(t, y_t)` pairs: per-step targets at steps `1..=k`, or the final output at `k`.
fn targets(e: &Example) -> Vec<(usize, &[f64])> {
    match &e.ys {
        Some(ys) => ys.iter().enumerate().map(|(t, y)| (t + 1, y.as_slice())).collect(),
        None => vec![(e.x.len(), e.y.as_slice())],
    }
}

/// Parameter-shaped gradient (or update) for a [`Linear2RNN`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub h0: Vec<f64>,
    pub a: DenseTensor,
    pub omega: DMatrix<f64>,
    /// Loss value at which the gradient was taken.
    pub loss: f64,
}

impl Gradients {
    pub fn zeros(n: usize, d: usize, p: usize) -> Self {
        Self {
            h0: vec![0.0; n],
            a: DenseTensor::zeros(&[n, d, n]),
            omega: DMatrix::zeros(p, n),
            loss: 0.0,
        }
    }

    pub(crate) fn params(&self) -> [&[f64]; 3] {
        [self.h0.as_slice(), self.a.data(), self.omega.as_slice()]
    }

    pub fn norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Vector-valued weighted finite automaton over the alphabet `0..d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VvWFA {
    pub alpha: Vec<f64>,
    pub transitions: Vec<DMatrix<f64>>,
    pub omega: DMatrix<f64>,
}

impl VvWFA {
    pub fn new(alpha: Vec<f64>, transitions: Vec<DMatrix<f64>>, omega: DMatrix<f64>) -> Result<Self> {
        let n = alpha.len();
        if transitions.is_empty() {
            return Err(invalid("a WFA needs at least one symbol"));
        }
        if transitions.iter().any(|t| t.shape() != (n, n)) {
            return Err(mismatch(format!("transition matrices must be {n}x{n}")));
        }
        if omega.ncols() != n {
            return Err(mismatch(format!("Omega must have {n} columns")));
        }
        Ok(Self {
            alpha,
            transitions,
            omega,
        })
    }

    pub fn random(n: usize, d: usize, p: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Linear2RNN::random(n, d, p, scale, rng).to_wfa()
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn d(&self) -> usize {
        self.transitions.len()
    }

    pub fn p(&self) -> usize {
        self.omega.nrows()
    }

    /// `Omega (A^{w_1} .. A^{w_k})^T alpha`.
    pub fn evaluate(&self, word: &[usize]) -> Result<Vec<f64>> {
        let mut v = nalgebra::DVector::from_column_slice(&self.alpha);
        for &s in word {
            let t = self
                .transitions
                .get(s)
                .ok_or_else(|| invalid(format!("symbol {s} out of range 0..{}", self.d())))?;
            v = t.tr_mul(&v);
        }
        Ok((&self.omega * v).iter().cloned().collect())
    }
}

/// One-hot encoding of a word.
pub fn one_hot(word: &[usize], d: usize) -> Vec<Vec<f64>> {
    word.iter()
        .map(|&s| {
            let mut e = vec![0.0; d];
            e[s] = 1.0;
            e
        })
        .collect()
}
