//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here returns singular values in decreasing order and thin factors.
//! SVDs are computed with `faer`.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for pseudo-inverses.
pub const PINV_RCOND: f64 = 1e-10;

/// Thin SVD `m = u * diag(s) * vt` with `s` sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub vt: DMatrix<f64>,
}

impl Svd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let k = rows.min(cols);
        if k == 0 {
            return Self {
                u: DMatrix::zeros(rows, 0),
                s: DVector::zeros(0),
                vt: DMatrix::zeros(0, cols),
            };
        }
        if m.iter().all(|v| *v == 0.0) {
            return Self {
                u: DMatrix::identity(rows, k),
                s: DVector::zeros(k),
                vt: DMatrix::identity(k, cols),
            };
        }
        let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
        let svd = fm.thin_svd().expect("SVD of a finite matrix");
        let (fu, fv) = (svd.U(), svd.V());
        let fs = svd.S().column_vector();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| fs[b].total_cmp(&fs[a]));
        Self {
            u: DMatrix::from_fn(rows, k, |i, j| fu[(i, order[j])]),
            s: DVector::from_fn(k, |i, _| fs[order[i]]),
            vt: DMatrix::from_fn(k, cols, |i, j| fv[(j, order[i])]),
        }
    }

    pub fn sigma_max(&self) -> f64 {
        if self.s.is_empty() {
            0.0
        } else {
            self.s[0]
        }
    }

    /// Number of singular values strictly above `rel_tol * sigma_max`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let cutoff = rel_tol * self.sigma_max();
        self.s.iter().filter(|&&v| v > cutoff && v > 0.0).count()
    }

    /// Keep the leading `r` triplets (clamped to the available count).
    pub fn truncate(&self, r: usize) -> Svd {
        let r = r.min(self.s.len());
        Svd {
            u: self.u.columns(0, r).into_owned(),
            s: self.s.rows(0, r).into_owned(),
            vt: self.vt.rows(0, r).into_owned(),
        }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, sv) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(*sv);
        }
        us * &self.vt
    }

    /// Moore-Penrose pseudo-inverse, dropping singular values below `rcond * sigma_max`.
    pub fn pinv(&self, rcond: f64) -> DMatrix<f64> {
        let cutoff = rcond * self.sigma_max();
        let rows = self.vt.ncols();
        let cols = self.u.nrows();
        let mut out = DMatrix::zeros(rows, cols);
        for (j, &sv) in self.s.iter().enumerate() {
            if sv > cutoff && sv > 0.0 {
                let v = self.vt.row(j).transpose();
                let u = self.u.column(j);
                out.ger(1.0 / sv, &v, &u, 1.0);
            }
        }
        out
    }
}

pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    Svd::new(m).pinv(PINV_RCOND)
}

/// Thin QR with `q` having `min(rows, cols)` orthonormal columns.
pub fn thin_qr(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.clone().qr();
    (qr.q(), qr.r())
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
pub fn spectral_norm_sq_of_gram(gram: &DMatrix<f64>) -> f64 {
    if gram.is_empty() {
        return 0.0;
    }
    gram.clone().symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_is_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 4, &[1., 0., 0., 2., 0., 5., 0., 0., 0., 0., 3., 0.]);
        let svd = Svd::new(&m);
        assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert!((svd.reconstruct() - &m).norm() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let m = DMatrix::from_row_slice(2, 2, &[1., 2., 2., 4.]);
        let p = pinv(&m);
        // Penrose conditions
        assert!((&m * &p * &m - &m).norm() < 1e-12);
        assert!((&p * &m * &p - &p).norm() < 1e-12);
    }

    #[test]
    fn near_rank_one_truncation_is_accurate() {
        let u = [0.3, -0.7];
        let v = [0.1, 0.5, -0.2, 0.9];
        let mut m = DMatrix::from_fn(2, 4, |i, j| u[i] * v[j]);
        m[(0, 0)] += 1e-9;
        let svd = Svd::new(&m);
        assert!((svd.reconstruct() - &m).norm() < 1e-15);
        let err = (svd.truncate(1).reconstruct() - &m).norm();
        assert!((err - svd.s[1]).abs() < 1e-15);
    }

    #[test]
    fn wide_and_empty_shapes() {
        let m = DMatrix::from_fn(2, 5, |i, j| (i + 2 * j) as f64);
        let svd = Svd::new(&m);
        assert_eq!(svd.u.shape(), (2, 2));
        assert_eq!(svd.vt.shape(), (2, 5));
        let e = Svd::new(&DMatrix::zeros(0, 3));
        assert_eq!(e.numerical_rank(1e-10), 0);
    }
}
