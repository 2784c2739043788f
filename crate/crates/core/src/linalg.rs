//! Validated design matrices and the shared dense kernels built on them.
//!
//! Everything downstream works with a [`DesignMatrix`]: an `n x d` real matrix with
//! `d >= n` and full row rank. The Gram matrix `X X^T` is then positive definite and
//! all solves go through its Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use crate::error::{Error, Result};

/// Relative threshold for the numerical rank test.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Number of rows (observations).
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of columns (parameters).
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Kernel dimension `d - n`.
    pub fn kernel_dim(&self) -> usize {
        self.d() - self.n()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        &self.x * self.x.transpose()
    }

    pub(crate) fn gram_cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.gram()).ok_or(Error::NotPositiveDefinite)
    }

    /// Submatrix keeping only the listed columns, in order.
    pub fn columns(&self, idx: &[usize]) -> DMatrix<f64> {
        self.x.select_columns(idx)
    }
}

/// Orthonormal basis of `ker X`, stored column-wise (`d x (d - n)`).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    pub q: DMatrix<f64>,
}

impl KernelBasis {
    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    /// Maps kernel coordinates `w` to `Q w`.
    pub fn embed(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.q * w
    }
}

/// Checks finiteness, shape, and full row rank.
pub fn validate_design(x: DMatrix<f64>) -> Result<DesignMatrix> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 || d < n {
        return Err(Error::BadShape { n, d });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let sv = x.singular_values();
    let smax = sv.max();
    let thresh = RANK_TOL * smax * n.max(d) as f64;
    let rank = sv.iter().filter(|&&s| s > thresh).count();
    if rank < n {
        return Err(Error::RankDeficient { rank, n });
    }
    Ok(DesignMatrix { x })
}

/// Convenience constructor from row slices.
pub fn design_from_rows(rows: &[&[f64]]) -> Result<DesignMatrix> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("ragged rows".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    validate_design(x)
}

/// `log det(X X^T)` as twice the sum of the log Cholesky diagonal.
pub fn log_det_gram(design: &DesignMatrix) -> Result<f64> {
    let chol = design.gram_cholesky()?;
    Ok(log_det_from_cholesky(&chol))
}

pub(crate) fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)?;
    Ok(log_det_from_cholesky(&chol))
}

/// Minimum-norm solution `X^T (X X^T)^{-1} Y`, with one step of iterative refinement.
pub fn pinv_apply(design: &DesignMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != design.n() {
        return Err(Error::DimensionMismatch { expected: design.n(), got: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let chol = design.gram_cholesky()?;
    let x = design.x();
    let mut theta = x.transpose() * chol.solve(y);
    let resid = y - x * &theta;
    theta += x.transpose() * chol.solve(&resid);
    Ok(theta)
}

/// Householder reflectors of `A` (`m x k`, `m >= k`) and the full `m x m` orthogonal factor.
fn householder_full_q(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = a.shape();
    let mut r = a.clone();
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(k);
    for col in 0..k {
        let x = r.view((col, col), (m - col, 1)).column(0).into_owned();
        let norm = x.norm();
        let mut v = x.clone();
        if norm == 0.0 {
            vs.push(DVector::zeros(m - col));
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vn = v.norm();
        if vn == 0.0 {
            vs.push(DVector::zeros(m - col));
            continue;
        }
        v /= vn;
        let mut block = r.view_mut((col, col), (m - col, k - col));
        let proj = v.transpose() * &block;
        block -= 2.0 * &v * proj;
        vs.push(v);
    }
    let mut q = DMatrix::<f64>::identity(m, m);
    for (col, v) in vs.iter().enumerate().rev() {
        let mut block = q.view_mut((col, 0), (m - col, m));
        let proj = v.transpose() * &block;
        block -= 2.0 * v * proj;
    }
    q
}

/// Orthonormal basis of `ker X` from a full Householder QR of `X^T`.
///
/// Each column is sign-normalized so that its first entry with magnitude above
/// `1e-12` is positive; the basis is therefore a deterministic function of `X`.
pub fn kernel_basis(design: &DesignMatrix) -> KernelBasis {
    let (n, d) = (design.n(), design.d());
    if d == n {
        return KernelBasis { q: DMatrix::zeros(d, 0) };
    }
    let full = householder_full_q(&design.x().transpose());
    let mut q = full.columns(n, d - n).into_owned();
    for mut col in q.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    KernelBasis { q }
}
