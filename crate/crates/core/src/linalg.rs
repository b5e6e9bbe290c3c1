//! Small dense helpers shared by the fitter, smoothness selection, and inference.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// `XᵀWX` for diagonal `W`.
pub(crate) fn weighted_crossprod(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (mut row, &wi) in xw.row_iter_mut().zip(w.iter()) {
        row *= wi.sqrt();
    }
    xw.tr_mul(&xw)
}

/// `XᵀWz` for diagonal `W`.
pub(crate) fn weighted_tr_mul(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    x.tr_mul(&w.component_mul(z))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order (columns of the returned matrix follow the same order).
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub(crate) struct Factorized {
    pub chol: Cholesky<f64, Dyn>,
    pub ridged: bool,
}

impl Factorized {
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Cholesky of a symmetric positive-definite matrix. On failure a ridge of
/// `1e-8 * mean(diag)` is added once; `None` if that also fails.
pub(crate) fn factorize_spd(h: &DMatrix<f64>) -> Option<Factorized> {
    if let Some(chol) = Cholesky::new(h.clone()) {
        if chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
            return Some(Factorized { chol, ridged: false });
        }
    }
    let n = h.nrows();
    let mean_diag = h.diagonal().iter().sum::<f64>() / n.max(1) as f64;
    let ridge = 1e-8 * mean_diag.abs().max(f64::MIN_POSITIVE);
    let mut ridged = h.clone();
    for i in 0..n {
        ridged[(i, i)] += ridge;
    }
    Cholesky::new(ridged)
        .filter(|c| c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0))
        .map(|chol| Factorized { chol, ridged: true })
}
