//! Dense factorizations. nalgebra's SVD can return singular vectors that do
//! not reconstruct the input on exactly rank-deficient matrices, so SVDs go
//! through faer.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

/// Thin SVD `w = u diag(s) vt`, singular values non-increasing.
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub vt: DMatrix<f64>,
}

pub fn svd(w: &DMatrix<f64>) -> Option<Svd> {
    let (rows, cols) = w.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Some(Svd { u: DMatrix::zeros(rows, 0), s: DVector::zeros(0), vt: DMatrix::zeros(0, cols) });
    }
    let m = Mat::<f64>::from_fn(rows, cols, |i, j| w[(i, j)]);
    let f = m.thin_svd().ok()?;
    let (u, s, v) = (f.U(), f.S().column_vector(), f.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    Some(Svd {
        u: DMatrix::from_fn(rows, k, |i, j| u[(i, order[j])]),
        s: DVector::from_fn(k, |j, _| s[order[j]]),
        vt: DMatrix::from_fn(k, cols, |i, j| v[(j, order[i])]),
    })
}

/// Minimum-norm least squares for `a x = b`, ignoring singular values at or
/// below `rcond` times the largest. Also returns the numerical rank.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Option<(DVector<f64>, usize)> {
    let f = svd(a)?;
    let cutoff = rcond * f.s.iter().copied().fold(0.0, f64::max);
    let utb = f.u.transpose() * b;
    let mut y = DVector::zeros(f.s.len());
    let mut rank = 0;
    for i in 0..f.s.len() {
        if f.s[i] > cutoff {
            y[i] = utb[i] / f.s[i];
            rank += 1;
        }
    }
    Some((f.vt.transpose() * y, rank))
}
