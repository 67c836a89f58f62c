//! Dense multiway arrays.
//!
//! Storage is row-major: the last index varies fastest. Every reshaping
//! (grouped reshape, matricization, vectorization) and [`kron`] use this one
//! linearization, so `reshape_group(&[l, 1])` of a Hankel tensor contracted
//! against `kron(&[x1, .., xl])` equals the successive mode-vector products.
//!
//! Modes are indexed from zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn product(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(invalid(format!("mode dimensions must be positive, got {shape:?}")));
        }
        if product(&shape) != data.len() {
            return Err(mismatch(format!(
                "shape {shape:?} needs {} entries, got {}",
                product(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; product(shape)],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: v,
        }
    }

    /// Builds a tensor from a function of the multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n = product(shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self {
            shape: vec![r, c],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(mismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Relative Frobenius distance `|self - other| / |other|` (absolute if `other` is zero).
    pub fn rel_error(&self, other: &Self) -> Result<f64> {
        let diff = self.sub(other)?.norm();
        let base = other.norm();
        Ok(if base > 0.0 { diff / base } else { diff })
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// Grouped reshaping: consecutive modes are merged according to `groups`.
    pub fn reshape_group(&self, groups: &[usize]) -> Result<Self> {
        if groups.contains(&0) {
            return Err(invalid("group sizes must be positive"));
        }
        if groups.iter().sum::<usize>() != self.order() {
            return Err(invalid(format!(
                "groups {groups:?} do not sum to tensor order {}",
                self.order()
            )));
        }
        let mut new_shape = Vec::with_capacity(groups.len());
        let mut start = 0;
        for &g in groups {
            new_shape.push(product(&self.shape[start..start + g]));
            start += g;
        }
        Ok(Self {
            shape: new_shape,
            data: self.data.clone(),
        })
    }

    pub fn vectorize(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Matrix view of the grouped reshape `<T>_{k, order-k}`: rows index the first `k` modes.
    pub fn unfold(&self, k: usize) -> Result<DMatrix<f64>> {
        if k > self.order() {
            return Err(invalid(format!("split {k} beyond order {}", self.order())));
        }
        let rows = product(&self.shape[..k]);
        let cols = product(&self.shape[k..]);
        Ok(DMatrix::from_row_slice(rows, cols, &self.data))
    }

    /// Permutes modes: mode `i` of the result is mode `axes[i]` of `self`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let p = self.order();
        let mut seen = vec![false; p];
        if axes.len() != p || axes.iter().any(|&a| a >= p || std::mem::replace(&mut seen[a], true)) {
            return Err(invalid(format!("{axes:?} is not a permutation of 0..{p}")));
        }
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let strides = strides(&self.shape);
        let perm_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
        let mut idx = vec![0usize; p];
        let mut data = Vec::with_capacity(self.data.len());
        for _ in 0..self.data.len() {
            let off: usize = idx.iter().zip(&perm_strides).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
            increment(&mut idx, &new_shape);
        }
        Ok(Self { shape: new_shape, data })
    }

    /// Mode-`mode` matricization: `d_mode x prod(other dims)`, columns are mode fibers.
    pub fn matricize(&self, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        let axes = mode_front_axes(self.order(), mode);
        let moved = self.permute(&axes)?;
        let rows = self.shape[mode];
        let cols = self.data.len() / rows;
        Ok(Self {
            shape: vec![rows, cols],
            data: moved.data,
        })
    }

    /// Inverse of [`matricize`](Self::matricize) given the original shape.
    pub fn dematricize(m: &Self, mode: usize, shape: &[usize]) -> Result<Self> {
        if mode >= shape.len() {
            return Err(invalid(format!("mode {mode} out of range for order {}", shape.len())));
        }
        let rows = shape[mode];
        if m.shape != [rows, product(shape) / rows] {
            return Err(mismatch(format!("matrix {:?} cannot fold into {shape:?}", m.shape)));
        }
        let axes = mode_front_axes(shape.len(), mode);
        let moved_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let moved = Self::new(moved_shape, m.data.clone())?;
        moved.permute(&inverse_perm(&axes))
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(invalid(format!("mode {mode} out of range for order {}", self.order())));
        }
        Ok(())
    }

    /// `T x_mode X`, defined by `(T x_n X)_(n) = X T_(n)`.
    pub fn mode_matrix_product(&self, x: &DMatrix<f64>, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        if x.ncols() != self.shape[mode] {
            return Err(mismatch(format!(
                "matrix has {} columns, mode {mode} has dimension {}",
                x.ncols(),
                self.shape[mode]
            )));
        }
        // Contract over `mode` directly: split shape into (outer, d_mode, inner).
        let outer = product(&self.shape[..mode]);
        let dn = self.shape[mode];
        let inner = product(&self.shape[mode + 1..]);
        let m = x.nrows();
        let mut out = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for k in 0..dn {
                let src = &self.data[(o * dn + k) * inner..(o * dn + k + 1) * inner];
                for r in 0..m {
                    let w = x[(r, k)];
                    if w == 0.0 {
                        continue;
                    }
                    let dst = &mut out[(o * m + r) * inner..(o * m + r + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[mode] = m;
        Ok(Self { shape, data: out })
    }

    /// `T •_mode v`: contracts `mode` with `v`, dropping it.
    pub fn mode_vector_product(&self, v: &[f64], mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        if v.len() != self.shape[mode] {
            return Err(mismatch(format!(
                "vector has length {}, mode {mode} has dimension {}",
                v.len(),
                self.shape[mode]
            )));
        }
        let outer = product(&self.shape[..mode]);
        let dn = self.shape[mode];
        let inner = product(&self.shape[mode + 1..]);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (k, &w) in v.iter().enumerate() {
                let src = &self.data[(o * dn + k) * inner..(o * dn + k + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(mode);
        Ok(Self { shape, data: out })
    }

    /// Order-2 tensor as an `nalgebra` matrix.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.order() != 2 {
            return Err(invalid(format!(
                "expected an order-2 tensor, got order {}",
                self.order()
            )));
        }
        Ok(DMatrix::from_row_slice(self.shape[0], self.shape[1], &self.data))
    }
}

/// Kronecker product of vectors under the row-major convention
/// (`kron([a, b])[i * len(b) + j] = a[i] * b[j]`).
pub fn kron(vs: &[&[f64]]) -> Result<Vec<f64>> {
    let (first, rest) = vs.split_first().ok_or_else(|| invalid("kron of an empty list"))?;
    let mut acc = first.to_vec();
    for v in rest {
        let mut next = Vec::with_capacity(acc.len() * v.len());
        for &a in &acc {
            next.extend(v.iter().map(|&b| a * b));
        }
        acc = next;
    }
    Ok(acc)
}

/// Kronecker product that treats the empty list as the scalar `[1.0]`.
pub fn kron_or_one(vs: &[&[f64]]) -> Vec<f64> {
    if vs.is_empty() {
        vec![1.0]
    } else {
        kron(vs).expect("non-empty")
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

fn mode_front_axes(order: usize, mode: usize) -> Vec<usize> {
    std::iter::once(mode).chain((0..order).filter(|&a| a != mode)).collect()
}

fn inverse_perm(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
