//! Tensor-train (TT) vectors.
//!
//! A tensor of shape `(n_1, .., n_p)` is stored as cores `G_k` of shape
//! `(r_{k-1}, n_k, r_k)` with boundary ranks `r_0 = r_p = 1`, so that
//! `T[i_1, .., i_p] = G_1[:, i_1, :] G_2[:, i_2, :] .. G_p[:, i_p, :]`.
//! Core data is row-major in `(left, mode, right)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::linalg::{thin_qr, Svd};
use crate::tensor::DenseTensor;

/// Default relative truncation tolerance for TT-SVD and rounding.
pub const DEFAULT_TT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtCore {
    pub left: usize,
    pub mode: usize,
    pub right: usize,
    pub data: Vec<f64>,
}

impl TtCore {
    pub fn new(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != left * mode * right {
            return Err(mismatch(format!(
                "core ({left}, {mode}, {right}) needs {} entries, got {}",
                left * mode * right,
                data.len()
            )));
        }
        Ok(Self {
            left,
            mode,
            right,
            data,
        })
    }

    pub fn zeros(left: usize, mode: usize, right: usize) -> Self {
        Self {
            left,
            mode,
            right,
            data: vec![0.0; left * mode * right],
        }
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[(a * self.mode + i) * self.right + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, v: f64) {
        self.data[(a * self.mode + i) * self.right + b] = v;
    }

    /// `(left * mode) x right` unfolding.
    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left * self.mode, self.right, &self.data)
    }

    /// `left x (mode * right)` unfolding.
    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left, self.mode * self.right, &self.data)
    }

    /// Slice `G[:, i, :]` as a `left x right` matrix.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.left, self.right, |a, b| self.get(a, i, b))
    }

    pub fn as_tensor(&self) -> DenseTensor {
        DenseTensor::new(vec![self.left, self.mode, self.right], self.data.clone()).expect("core invariant")
    }

    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        match t.shape() {
            &[l, m, r] => Self::new(l, m, r, t.data().to_vec()),
            s => Err(invalid(format!("core must be order 3, got shape {s:?}"))),
        }
    }

    fn from_left_unfolding(m: &DMatrix<f64>, left: usize, mode: usize) -> Self {
        debug_assert_eq!(m.nrows(), left * mode);
        Self {
            left,
            mode,
            right: m.ncols(),
            data: row_major(m),
        }
    }

    fn from_right_unfolding(m: &DMatrix<f64>, mode: usize, right: usize) -> Self {
        debug_assert_eq!(m.ncols(), mode * right);
        Self {
            left: m.nrows(),
            mode,
            right,
            data: row_major(m),
        }
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtVector {
    cores: Vec<TtCore>,
}

impl TtVector {
    pub fn from_cores(cores: Vec<TtCore>) -> Result<Self> {
        if cores.is_empty() {
            return Err(invalid("a TT vector needs at least one core"));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(mismatch("boundary ranks must be 1"));
        }
        for (k, w) in cores.windows(2).enumerate() {
            if w[0].right != w[1].left {
                return Err(mismatch(format!(
                    "rank mismatch between cores {k} and {}: {} vs {}",
                    k + 1,
                    w[0].right,
                    w[1].left
                )));
            }
        }
        if cores.iter().any(|c| c.mode == 0 || c.left == 0 || c.right == 0) {
            return Err(invalid("core dimensions must be positive"));
        }
        Ok(Self { cores })
    }

    /// All-zero TT with uniform interior rank `rank`.
    pub fn zeros(shape: &[usize], rank: usize) -> Result<Self> {
        Self::uniform(shape, rank, |_, _, _, _| 0.0)
    }

    /// Uniform-rank TT whose core entries come from `f(core, a, i, b)`.
    pub fn uniform(shape: &[usize], rank: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        if shape.is_empty() || rank == 0 {
            return Err(invalid("need a non-empty shape and a positive rank"));
        }
        let p = shape.len();
        let cores = shape
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let left = if k == 0 { 1 } else { rank };
                let right = if k + 1 == p { 1 } else { rank };
                let mut c = TtCore::zeros(left, n, right);
                for a in 0..left {
                    for i in 0..n {
                        for b in 0..right {
                            c.set(a, i, b, f(k, a, i, b));
                        }
                    }
                }
                c
            })
            .collect();
        Self::from_cores(cores)
    }

    pub fn cores(&self) -> &[TtCore] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<TtCore> {
        self.cores
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.mode).collect()
    }

    /// Interior ranks `(r_1, .., r_{p-1})`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1].iter().map(|c| c.right).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn num_parameters(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    pub fn entry(&self, idx: &[usize]) -> f64 {
        let mut row = DVector::from_element(1, 1.0).transpose();
        for (c, &i) in self.cores.iter().zip(idx) {
            row *= c.slice(i);
        }
        row[(0, 0)]
    }

    /// Densifies the tensor. Allocates `prod(shape)` entries.
    pub fn to_dense(&self) -> DenseTensor {
        // acc is row-major (prod of modes so far) x r_k
        let mut acc = vec![1.0];
        let mut rows = 1usize;
        for c in &self.cores {
            let a = DMatrix::from_row_slice(rows, c.left, &acc);
            let next = a * c.right_unfolding();
            rows *= c.mode;
            acc = row_major(&next);
        }
        DenseTensor::new(self.shape(), acc).expect("shape matches")
    }

    /// TT-SVD: sequential truncated SVDs keeping at each step
    /// `min(max_rank, #{sigma > tol * sigma_max})` (at least one) singular triplets.
    pub fn svd(t: &DenseTensor, max_rank: usize, tol: f64) -> Result<Self> {
        if t.order() == 0 {
            return Err(invalid("TT-SVD needs a tensor of order >= 1"));
        }
        if max_rank == 0 {
            return Err(invalid("max_rank must be >= 1"));
        }
        let shape = t.shape().to_vec();
        let p = shape.len();
        let mut rest = t.data().to_vec();
        let mut r_prev = 1usize;
        let mut cores = Vec::with_capacity(p);
        for &n in &shape[..p - 1] {
            let rows = r_prev * n;
            let cols = rest.len() / rows;
            let m = DMatrix::from_row_slice(rows, cols, &rest);
            let svd = Svd::new(&m);
            let r = svd.numerical_rank(tol).clamp(1, max_rank).min(svd.s.len());
            let tr = svd.truncate(r);
            cores.push(TtCore::from_left_unfolding(&tr.u, r_prev, n));
            let mut sv = tr.vt;
            for (j, s) in tr.s.iter().enumerate() {
                sv.row_mut(j).scale_mut(*s);
            }
            rest = row_major(&sv);
            r_prev = r;
        }
        cores.push(TtCore::new(r_prev, shape[p - 1], 1, rest)?);
        Self::from_cores(cores)
    }

    /// TT rounding: right-to-left orthogonalization, then left-to-right truncated SVDs.
    pub fn round(&self, max_rank: usize, tol: f64) -> Result<Self> {
        if max_rank == 0 {
            return Err(invalid("max_rank must be >= 1"));
        }
        let mut cores = self.cores.clone();
        right_orthogonalize(&mut cores, 0);
        let p = cores.len();
        for k in 0..p - 1 {
            let c = &cores[k];
            let svd = Svd::new(&c.left_unfolding());
            let r = svd.numerical_rank(tol).clamp(1, max_rank).min(svd.s.len());
            let tr = svd.truncate(r);
            let (left, mode) = (c.left, c.mode);
            cores[k] = TtCore::from_left_unfolding(&tr.u, left, mode);
            let mut sv = tr.vt;
            for (j, s) in tr.s.iter().enumerate() {
                sv.row_mut(j).scale_mut(*s);
            }
            let next = &cores[k + 1];
            let merged = sv * next.right_unfolding();
            cores[k + 1] = TtCore::from_right_unfolding(&merged, next.mode, next.right);
        }
        Self::from_cores(cores)
    }

    /// Exact sum with block-diagonal cores; ranks add.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(mismatch(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let p = self.order();
        if p == 1 {
            let data = self.cores[0]
                .data
                .iter()
                .zip(&other.cores[0].data)
                .map(|(a, b)| a + b)
                .collect();
            return Self::from_cores(vec![TtCore::new(1, self.cores[0].mode, 1, data)?]);
        }
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .enumerate()
            .map(|(k, (a, b))| {
                let first = k == 0;
                let last = k + 1 == p;
                let left = if first { 1 } else { a.left + b.left };
                let right = if last { 1 } else { a.right + b.right };
                let mut c = TtCore::zeros(left, a.mode, right);
                let (bl, br) = (if first { 0 } else { a.left }, if last { 0 } else { a.right });
                for i in 0..a.mode {
                    for x in 0..a.left {
                        for y in 0..a.right {
                            c.set(x, i, y, a.get(x, i, y));
                        }
                    }
                    for x in 0..b.left {
                        for y in 0..b.right {
                            c.set(bl + x, i, br + y, b.get(x, i, y));
                        }
                    }
                }
                c
            })
            .collect();
        Self::from_cores(cores)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.cores[0].data {
            *v *= c;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(mismatch(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(left_environment(&self.cores, &other.cores)[(0, 0)])
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).unwrap_or(0.0).max(0.0).sqrt()
    }

    /// Inserts `M M^{-1}` on bond `k` (between cores `k` and `k+1`):
    /// core `k` gets `x_3 M^{-T}`, core `k+1` gets `x_1 M`.
    pub fn change_bond_basis(&self, bond: usize, m: &DMatrix<f64>) -> Result<Self> {
        if bond + 1 >= self.order() {
            return Err(invalid(format!("bond {bond} out of range")));
        }
        let r = self.cores[bond].right;
        if m.shape() != (r, r) {
            return Err(mismatch(format!("basis must be {r}x{r}")));
        }
        let inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| invalid("basis change matrix is singular"))?;
        let mut cores = self.cores.clone();
        let left = cores[bond].as_tensor().mode_matrix_product(&inv.transpose(), 2)?;
        let right = cores[bond + 1].as_tensor().mode_matrix_product(m, 0)?;
        cores[bond] = TtCore::from_tensor(&left)?;
        cores[bond + 1] = TtCore::from_tensor(&right)?;
        Self::from_cores(cores)
    }
}

/// Left-orthogonalizes cores `0..k` (QR sweep), pushing the remainder into core `k`.
pub(crate) fn left_orthogonalize(cores: &mut [TtCore], k: usize) {
    for j in 0..k {
        let c = &cores[j];
        let (q, r) = thin_qr(&c.left_unfolding());
        let (left, mode) = (c.left, c.mode);
        cores[j] = TtCore::from_left_unfolding(&q, left, mode);
        let next = &cores[j + 1];
        let merged = r * next.right_unfolding();
        cores[j + 1] = TtCore::from_right_unfolding(&merged, next.mode, next.right);
    }
}

/// Right-orthogonalizes cores `k+1..p`, pushing the remainder into core `k`.
pub(crate) fn right_orthogonalize(cores: &mut [TtCore], k: usize) {
    for j in (k + 1..cores.len()).rev() {
        let c = &cores[j];
        let (q, r) = thin_qr(&c.right_unfolding().transpose());
        let (mode, right) = (c.mode, c.right);
        cores[j] = TtCore::from_right_unfolding(&q.transpose(), mode, right);
        let prev = &cores[j - 1];
        let merged = prev.left_unfolding() * r.transpose();
        cores[j - 1] = TtCore::from_left_unfolding(&merged, prev.left, prev.mode);
    }
}

/// Contracts two core chains over their shared modes from the left:
/// `E[a, b] = sum_i A[.., i, a] B[.., i, b]` starting from their left boundaries.
pub(crate) fn left_environment(a: &[TtCore], b: &[TtCore]) -> DMatrix<f64> {
    let mut env = DMatrix::from_element(a[0].left, b[0].left, 0.0);
    for x in 0..a[0].left.min(b[0].left) {
        env[(x, x)] = 1.0;
    }
    for (ca, cb) in a.iter().zip(b) {
        let mut next = DMatrix::zeros(ca.right, cb.right);
        for i in 0..ca.mode {
            next += ca.slice(i).transpose() * &env * cb.slice(i);
        }
        env = next;
    }
    env
}

/// Contracts two core chains over their shared modes from the right:
/// `E[a, b] = sum_i A[a, i, ..] B[b, i, ..]` ending at their right boundaries.
pub(crate) fn right_environment(a: &[TtCore], b: &[TtCore]) -> DMatrix<f64> {
    let last_a = a.last().expect("non-empty");
    let last_b = b.last().expect("non-empty");
    let mut env = DMatrix::zeros(last_a.right, last_b.right);
    for x in 0..last_a.right.min(last_b.right) {
        env[(x, x)] = 1.0;
    }
    for (ca, cb) in a.iter().rev().zip(b.iter().rev()) {
        let mut next = DMatrix::zeros(ca.left, cb.left);
        for i in 0..ca.mode {
            next += ca.slice(i) * &env * cb.slice(i).transpose();
        }
        env = next;
    }
    env
}

// ---------------------------------------------------------------------------
// Design tensors for minibatch recovery
// ---------------------------------------------------------------------------

/// TT of shape `(M, d, .., d)` whose slice `i` along the batch mode is
/// `x_1^(i) (x) .. (x) x_l^(i)`. First core is `I_M`, the others are diagonal
/// in the batch index: `A_k[i, :, j] = delta_ij x_k^(i)`.
pub fn design_from_batch(batch: &[&[Vec<f64>]]) -> Result<TtVector> {
    let m = batch.len();
    if m == 0 {
        return Err(invalid("empty batch"));
    }
    let l = batch[0].len();
    if l == 0 {
        return Err(invalid("design TT needs sequences of length >= 1"));
    }
    let d = batch[0][0].len();
    for seq in batch {
        if seq.len() != l || seq.iter().any(|x| x.len() != d) {
            return Err(invalid("batch sequences must share length and input dimension"));
        }
    }
    let mut cores = Vec::with_capacity(l + 1);
    let mut first = TtCore::zeros(1, m, m);
    for i in 0..m {
        first.set(0, i, i, 1.0);
    }
    cores.push(first);
    for k in 0..l {
        let right = if k + 1 == l { 1 } else { m };
        let mut c = TtCore::zeros(m, d, right);
        for (i, seq) in batch.iter().enumerate() {
            let b = if k + 1 == l { 0 } else { i };
            for (j, &v) in seq[k].iter().enumerate() {
                c.set(i, j, b, v);
            }
        }
        cores.push(c);
    }
    TtVector::from_cores(cores)
}

/// One batch row `X[m, ...]` of a design TT, with zero bond indices dropped.
struct DesignRow {
    cores: Vec<TtCore>,
}

fn design_rows(x: &TtVector) -> Vec<DesignRow> {
    let first = &x.cores[0];
    let rest = &x.cores[1..];
    (0..first.mode)
        .map(|m| {
            // boundary row vector selected by the batch index
            let mut boundary: Vec<f64> = (0..first.right).map(|b| first.get(0, m, b)).collect();
            let mut keep: Vec<usize> = (0..boundary.len()).filter(|&b| boundary[b] != 0.0).collect();
            boundary = keep.iter().map(|&b| boundary[b]).collect();
            let mut cores = Vec::with_capacity(rest.len());
            for (k, c) in rest.iter().enumerate() {
                let last = k + 1 == rest.len();
                let next_keep: Vec<usize> = if last {
                    vec![0]
                } else {
                    (0..c.right)
                        .filter(|&b| keep.iter().any(|&a| (0..c.mode).any(|i| c.get(a, i, b) != 0.0)))
                        .collect()
                };
                let left = if k == 0 { 1 } else { keep.len().max(1) };
                let mut core = TtCore::zeros(left, c.mode, next_keep.len().max(1));
                for i in 0..c.mode {
                    for (nb, &b) in next_keep.iter().enumerate() {
                        if k == 0 {
                            let v: f64 = keep.iter().zip(&boundary).map(|(&a, &w)| w * c.get(a, i, b)).sum();
                            core.set(0, i, nb, v);
                        } else {
                            for (na, &a) in keep.iter().enumerate() {
                                core.set(na, i, nb, c.get(a, i, b));
                            }
                        }
                    }
                }
                cores.push(core);
                keep = next_keep;
                if keep.is_empty() {
                    keep = vec![0];
                }
            }
            DesignRow { cores }
        })
        .collect()
}

fn check_design_pair(x: &TtVector, h: &TtVector) -> Result<()> {
    let xs = x.shape();
    let hs = h.shape();
    if xs.len() < 2 || hs.len() != xs.len() || xs[1..] != hs[..hs.len() - 1] {
        return Err(mismatch(format!(
            "design shape {xs:?} incompatible with Hankel shape {hs:?}"
        )));
    }
    Ok(())
}

/// `<X>_{1,l} <H>_{l,1}` computed core by core; returns an `M x p` tensor.
pub fn design_apply(x: &TtVector, h: &TtVector) -> Result<DenseTensor> {
    check_design_pair(x, h)?;
    let rows = design_rows(x);
    let l = h.order() - 1;
    let out_core = &h.cores[l];
    let p = out_core.mode;
    let mut out = Vec::with_capacity(rows.len() * p);
    for row in &rows {
        let env = left_environment(&row.cores, &h.cores[..l]);
        // env: 1 x r_l
        for o in 0..p {
            let v: f64 = (0..out_core.left).map(|a| env[(0, a)] * out_core.get(a, o, 0)).sum();
            out.push(v);
        }
    }
    DenseTensor::new(vec![rows.len(), p], out)
}

/// Adjoint of [`design_apply`]: the TT (rank <= M for batch designs) whose
/// `<.>_{l,1}` matricization is `<X>_{1,l}^T residual`.
pub fn design_apply_adjoint(x: &TtVector, residual: &DenseTensor) -> Result<TtVector> {
    let m = x.cores[0].mode;
    let (rm, p) = match residual.shape() {
        &[a, b] => (a, b),
        s => return Err(mismatch(format!("residual must be M x p, got {s:?}"))),
    };
    if rm != m {
        return Err(mismatch(format!("residual has {rm} rows, design batch is {m}")));
    }
    let rows = design_rows(x);
    let l = x.order() - 1;
    let mut blocks: Vec<Vec<TtCore>> = Vec::with_capacity(m);
    for (i, row) in rows.into_iter().enumerate() {
        let mut cores = row.cores;
        let last = cores.pop().expect("l >= 1");
        // last input core keeps a unit bond that now carries the output core
        let last = TtCore::new(last.left, last.mode, 1, last.data)?;
        cores.push(last);
        let out: Vec<f64> = (0..p).map(|o| residual.get(&[i, o])).collect();
        cores.push(TtCore::new(1, p, 1, out)?);
        blocks.push(cores);
    }
    // block-diagonal concatenation of all rows
    let mut cores = Vec::with_capacity(l + 1);
    for k in 0..=l {
        let first = k == 0;
        let last = k == l;
        let left: usize = if first {
            1
        } else {
            blocks.iter().map(|b| b[k].left).sum()
        };
        let right: usize = if last {
            1
        } else {
            blocks.iter().map(|b| b[k].right).sum()
        };
        let mode = blocks[0][k].mode;
        let mut c = TtCore::zeros(left, mode, right);
        let (mut lo, mut ro) = (0, 0);
        for b in &blocks {
            let bc = &b[k];
            for a in 0..bc.left {
                for i in 0..mode {
                    for r in 0..bc.right {
                        let v = bc.get(a, i, r);
                        if v != 0.0 {
                            c.set(if first { 0 } else { lo + a }, i, if last { 0 } else { ro + r }, v);
                        }
                    }
                }
            }
            if !first {
                lo += bc.left;
            }
            if !last {
                ro += bc.right;
            }
        }
        cores.push(c);
    }
    TtVector::from_cores(cores)
}

/// Batch Gram matrix `X X^T` of a design TT (`M x M`), without densifying.
pub fn design_gram(x: &TtVector) -> DMatrix<f64> {
    let rows = design_rows(x);
    let m = rows.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = left_environment(&rows[i].cores, &rows[j].cores)[(0, 0)];
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `X X^T` for the design of a batch of input sequences: entry `(i, j)` is
/// `prod_k <x_k^(i), x_k^(j)>`.
pub fn batch_gram(batch: &[&[Vec<f64>]]) -> DMatrix<f64> {
    let m = batch.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v: f64 = batch[i]
                .iter()
                .zip(batch[j])
                .map(|(a, b)| a.iter().zip(b).map(|(u, w)| u * w).sum::<f64>())
                .product();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Same as [`design_apply`] on `design_from_batch(batch)`, without building the design.
pub fn batch_apply(batch: &[&[Vec<f64>]], h: &TtVector) -> Result<DenseTensor> {
    let l = h.order() - 1;
    let out_core = &h.cores[l];
    let p = out_core.mode;
    let mut out = Vec::with_capacity(batch.len() * p);
    let mut env = Vec::new();
    let mut next = Vec::new();
    for seq in batch {
        if seq.len() != l {
            return Err(mismatch(format!("sequence length {} but Hankel order {l}", seq.len())));
        }
        env.clear();
        env.push(1.0);
        for (x, c) in seq.iter().zip(&h.cores[..l]) {
            if x.len() != c.mode {
                return Err(mismatch("input dimension does not match Hankel mode"));
            }
            next.clear();
            next.resize(c.right, 0.0);
            for (a, &e) in env.iter().enumerate() {
                for (i, &xi) in x.iter().enumerate() {
                    let w = e * xi;
                    if w != 0.0 {
                        let row = &c.data[(a * c.mode + i) * c.right..][..c.right];
                        for (n, v) in next.iter_mut().zip(row) {
                            *n += w * v;
                        }
                    }
                }
            }
            std::mem::swap(&mut env, &mut next);
        }
        for o in 0..p {
            out.push(env.iter().enumerate().map(|(a, e)| e * out_core.get(a, o, 0)).sum());
        }
    }
    DenseTensor::new(vec![batch.len(), p], out)
}

/// Same as [`design_apply_adjoint`] on `design_from_batch(batch)`: the rank-`M`
/// TT `sum_i x_1^(i) (x) .. (x) x_l^(i) (x) residual[i, :]`.
pub fn batch_apply_adjoint(batch: &[&[Vec<f64>]], residual: &DenseTensor) -> Result<TtVector> {
    let m = batch.len();
    if m == 0 {
        return Err(invalid("empty batch"));
    }
    let p = match residual.shape() {
        &[a, b] if a == m => b,
        s => return Err(mismatch(format!("residual must be {m} x p, got {s:?}"))),
    };
    let l = batch[0].len();
    if l == 0 {
        return Err(invalid("sequences must have length >= 1"));
    }
    let d = batch[0][0].len();
    if batch.iter().any(|s| s.len() != l || s.iter().any(|x| x.len() != d)) {
        return Err(invalid("batch sequences must share length and input dimension"));
    }
    let mut cores = Vec::with_capacity(l + 1);
    let mut first = TtCore::zeros(1, d, m);
    for (i, seq) in batch.iter().enumerate() {
        for (j, &v) in seq[0].iter().enumerate() {
            first.set(0, j, i, v);
        }
    }
    cores.push(first);
    for k in 1..l {
        let mut c = TtCore::zeros(m, d, m);
        for (i, seq) in batch.iter().enumerate() {
            for (j, &v) in seq[k].iter().enumerate() {
                c.set(i, j, i, v);
            }
        }
        cores.push(c);
    }
    let out = (0..m)
        .flat_map(|i| (0..p).map(move |o| (i, o)))
        .map(|(i, o)| residual.get(&[i, o]))
        .collect();
    cores.push(TtCore::new(m, p, 1, out)?);
    TtVector::from_cores(cores)
}
