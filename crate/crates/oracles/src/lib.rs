//! Brute-force reference computations for testing `ordgam`.
//!
//! Everything here is written against plain `nalgebra` containers with its
//! own elimination and eigen routines: no Cholesky, no shared solver, and no
//! dependency on the production crate. The routines favour transparency over
//! speed and are meant for fixtures of a few hundred rows.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("singular system")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// A reference value together with what it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub name: &'static str,
    pub inputs_digest: u64,
    pub values: Vec<f64>,
    pub tolerance: f64,
}

impl OracleResult {
    pub fn new(name: &'static str, inputs: &[&[f64]], values: Vec<f64>, tolerance: f64) -> Self {
        let mut h = DefaultHasher::new();
        for block in inputs {
            block.len().hash(&mut h);
            for v in block.iter() {
                v.to_bits().hash(&mut h);
            }
        }
        Self {
            name,
            inputs_digest: h.finish(),
            values,
            tolerance,
        }
    }

    /// Largest absolute deviation of `candidate` from the reference.
    pub fn max_abs_diff(&self, candidate: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(candidate)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn agrees(&self, candidate: &[f64]) -> bool {
        candidate.len() == self.values.len() && self.max_abs_diff(candidate) <= self.tolerance
    }
}

/// LU decomposition with partial pivoting, stored in place.
struct Lu {
    a: DMatrix<f64>,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    fn new(mut a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(OracleError::Dimension("LU of a non-square matrix".into()));
        }
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut piv = k;
            for i in k + 1..n {
                if a[(i, k)].abs() > a[(piv, k)].abs() {
                    piv = i;
                }
            }
            if a[(piv, k)].abs() <= 1e-14 * scale {
                return Err(OracleError::Singular);
            }
            if piv != k {
                a.swap_rows(piv, k);
                perm.swap(piv, k);
                sign = -sign;
            }
            let d = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / d;
                a[(i, k)] = f;
                for j in k + 1..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        Ok(Self { a, perm, sign })
    }

    fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.a.nrows();
        let mut x = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.a[(i, j)] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.a[(i, j)] * x[j];
            }
            x[i] /= self.a[(i, i)];
        }
        x
    }

    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            out.set_column(c, &self.solve_vec(&b.column(c).into_owned()));
        }
        out
    }

    /// log|det|; the sign is tracked separately.
    fn log_abs_det(&self) -> f64 {
        self.a.diagonal().iter().map(|d| d.abs().ln()).sum()
    }

    fn det_sign(&self) -> f64 {
        self.a.diagonal().iter().fold(self.sign, |s, d| s * d.signum())
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix, eigenvalues
/// sorted in decreasing order.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() < 1e-15 * (1.0 + a.norm()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Solves `(XᵀX + Σ λ_j S_j) β = Xᵀy` by Gaussian elimination.
pub fn penalized_ls_oracle(
    x: &DMatrix<f64>,
    penalties: &[DMatrix<f64>],
    lambda: &[f64],
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    if penalties.len() != lambda.len() {
        return Err(OracleError::Dimension("one λ per penalty".into()));
    }
    if x.nrows() != y.len() {
        return Err(OracleError::Dimension("rows of X vs length of y".into()));
    }
    let p = x.ncols();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] = (0..x.nrows()).map(|r| x[(r, i)] * x[(r, j)]).sum();
        }
    }
    for (s, &l) in penalties.iter().zip(lambda) {
        if s.nrows() != p || s.ncols() != p {
            return Err(OracleError::Dimension("penalty must be p×p".into()));
        }
        a += s * l;
    }
    let b = DVector::from_fn(p, |i, _| (0..x.nrows()).map(|r| x[(r, i)] * y[r]).sum());
    Ok(Lu::new(a)?.solve_vec(&b))
}

/// Restricted log-likelihood of the Gaussian linear mixed model equivalent
/// to a single penalized smooth.
///
/// `penalty` is the full p×p penalty (unscaled). Its null space, together
/// with every column the penalty leaves untouched, forms the fixed effects
/// `X_f = X U₀`; the range contributes random effects `Z = X U₊ Λ^{-1/2}`
/// with `u ~ N(0, τ² I)`. The marginal covariance is `V = φI + τ² Z Zᵀ`
/// and the restricted likelihood is the density of the error contrasts
/// orthogonal to `X_f`.
pub fn gaussian_marginal_oracle(
    x: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    y: &DVector<f64>,
    tau2: f64,
    phi: f64,
) -> Result<f64> {
    let n = x.nrows();
    let p = x.ncols();
    if penalty.nrows() != p || y.len() != n {
        return Err(OracleError::Dimension("X, penalty and y disagree".into()));
    }
    let (values, vectors) = jacobi_eigen(penalty);
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values.iter().filter(|&&v| v > 1e-9 * top).count();
    let u_plus = vectors.columns(0, rank).into_owned();
    let u_zero = vectors.columns(rank, p - rank).into_owned();

    let xf = x * &u_zero;
    let inv_sqrt = DMatrix::from_diagonal(&DVector::from_fn(rank, |i, _| 1.0 / values[i].sqrt()));
    let z = x * &u_plus * inv_sqrt;
    let v = DMatrix::<f64>::identity(n, n) * phi + &z * z.transpose() * tau2;

    let lu_v = Lu::new(v)?;
    let vinv_xf = lu_v.solve(&xf);
    let vinv_y = lu_v.solve_vec(y);
    let xtvx = xf.transpose() * &vinv_xf;
    let lu_f = Lu::new(xtvx)?;
    let beta = lu_f.solve_vec(&(xf.transpose() * &vinv_y));
    let r = y - &xf * &beta;
    let quad = r.dot(&lu_v.solve_vec(&r));
    if lu_v.det_sign() <= 0.0 || lu_f.det_sign() <= 0.0 {
        return Err(OracleError::Singular);
    }
    let m_p = (p - rank) as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(-0.5 * (lu_v.log_abs_det() + lu_f.log_abs_det() + quad + (n as f64 - m_p) * two_pi.ln()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleFamily {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Some level has a constant binary response, or the fit diverged.
    pub separated: bool,
}

fn with_intercept(covariates: &DMatrix<f64>) -> DMatrix<f64> {
    let n = covariates.nrows();
    let mut x = DMatrix::from_element(n, covariates.ncols() + 1, 1.0);
    x.columns_mut(1, covariates.ncols()).copy_from(covariates);
    x
}

/// Unpenalized fit returning (deviance, diverged).
fn glm_deviance(x: &DMatrix<f64>, y: &DVector<f64>, family: OracleFamily) -> Result<(f64, bool)> {
    let none: [DMatrix<f64>; 0] = [];
    match family {
        OracleFamily::Gaussian => {
            let beta = penalized_ls_oracle(x, &none, &[], y)?;
            let r = y - x * beta;
            Ok((r.dot(&r), false))
        }
        OracleFamily::Binomial => {
            let n = y.len();
            let mut eta = DVector::from_fn(n, |i, _| {
                let m: f64 = (y[i] + 0.5) / 2.0;
                (m / (1.0 - m)).ln()
            });
            let mut dev_old = f64::INFINITY;
            let mut dev = f64::INFINITY;
            let mut converged = false;
            for _ in 0..100 {
                let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
                let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
                let zw = DVector::from_fn(n, |i, _| w[i].sqrt() * (eta[i] + (y[i] - mu[i]) / w[i]));
                let xw = DMatrix::from_fn(n, x.ncols(), |i, j| w[i].sqrt() * x[(i, j)]);
                let beta = penalized_ls_oracle(&xw, &none, &[], &zw)?;
                eta = x * beta;
                dev = binomial_deviance(y, &eta);
                if (dev_old - dev).abs() < 1e-10 * (dev.abs() + 0.1) {
                    converged = true;
                    break;
                }
                dev_old = dev;
            }
            let diverged = !converged || eta.iter().any(|e| e.abs() > 30.0);
            Ok((dev, diverged))
        }
    }
}

fn binomial_deviance(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    y.iter()
        .zip(eta.iter())
        .map(|(&yi, &e)| {
            // -2 log p(y | η) written to stay finite for large |η|
            let log1pexp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            2.0 * (log1pexp - yi * e)
        })
        .sum()
}

/// Likelihood-ratio test of a k-level factor given other covariates.
///
/// `levels` are 1-based. Binomial uses the deviance difference; Gaussian
/// with unknown variance uses `n log(RSS₀/RSS₁)`. Both are referred to
/// χ²_{k−1}.
pub fn glrt_factor_oracle(
    y: &DVector<f64>,
    levels: &[usize],
    k: usize,
    covariates: &DMatrix<f64>,
    family: OracleFamily,
) -> Result<GlrtResult> {
    let n = y.len();
    if levels.len() != n || covariates.nrows() != n {
        return Err(OracleError::Dimension("levels/covariates vs y".into()));
    }
    if k < 2 || levels.iter().any(|&l| l == 0 || l > k) {
        return Err(OracleError::Dimension("levels must lie in 1..=k with k ≥ 2".into()));
    }
    let x0 = with_intercept(covariates);
    let mut x1 = DMatrix::zeros(n, x0.ncols() + k - 1);
    x1.columns_mut(0, x0.ncols()).copy_from(&x0);
    for (i, &l) in levels.iter().enumerate() {
        if l > 1 {
            x1[(i, x0.ncols() + l - 2)] = 1.0;
        }
    }
    let (d0, _) = glm_deviance(&x0, y, family)?;
    let (d1, diverged) = glm_deviance(&x1, y, family)?;
    let statistic = match family {
        OracleFamily::Gaussian => n as f64 * (d0 / d1).ln(),
        OracleFamily::Binomial => (d0 - d1).max(0.0),
    };
    let constant_level = family == OracleFamily::Binomial
        && (1..=k).any(|lev| {
            let ys: Vec<f64> = levels
                .iter()
                .zip(y.iter())
                .filter(|(l, _)| **l == lev)
                .map(|(_, v)| *v)
                .collect();
            !ys.is_empty() && ys.iter().all(|v| *v == ys[0])
        });
    let df = k - 1;
    let p_value = ChiSquared::new(df as f64).map(|c| c.sf(statistic)).unwrap_or(f64::NAN);
    Ok(GlrtResult {
        statistic,
        df,
        p_value,
        separated: constant_level || diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_and_determinant() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let lu = Lu::new(a.clone()).unwrap();
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = lu.solve_vec(&b);
        assert!((&a * x - b).norm() < 1e-12);
        // det = 0*(1) - 2*(1-0) + 1*(0-3) = -5
        assert!((lu.log_abs_det() - 5f64.ln()).abs() < 1e-12);
        assert_eq!(lu.det_sign(), -1.0);
    }

    #[test]
    fn singular_detected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(Lu::new(a).err(), Some(OracleError::Singular));
    }

    #[test]
    fn jacobi_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let (vals, vecs) = jacobi_eigen(&m);
        let back = &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals.clone())) * vecs.transpose();
        assert!((back - &m).norm() < 1e-12);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn square_system_at_zero_lambda() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.5, 1.0, 0.0, 0.0, 3.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let s = DMatrix::identity(3, 3);
        let beta = penalized_ls_oracle(&x, &[s], &[0.0], &y).unwrap();
        assert!((&x * beta - y).norm() < 1e-12);
    }

    #[test]
    fn large_lambda_lands_in_null_space() {
        // second differences on 5 coefficients
        let mut d = DMatrix::zeros(3, 5);
        for i in 0..3 {
            d[(i, i)] = 1.0;
            d[(i, i + 1)] = -2.0;
            d[(i, i + 2)] = 1.0;
        }
        let s = d.transpose() * &d;
        let x = DMatrix::from_fn(40, 5, |i, j| if i % 5 == j { 1.0 } else { 0.0 });
        let y = DVector::from_fn(40, |i, _| ((i * 7) % 11) as f64);
        let beta = penalized_ls_oracle(&x, &[s], &[1e10], &y).unwrap();
        assert!((d * beta).norm() < 1e-4);
    }

    #[test]
    fn marginal_tau_to_zero_is_fixed_effects_reml() {
        let n = 30;
        let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { ((i * (j + 3)) % 7) as f64 / 7.0 });
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
        let mut s = DMatrix::zeros(4, 4);
        s[(2, 2)] = 1.0;
        s[(3, 3)] = 2.0;
        s[(2, 3)] = 0.5;
        s[(3, 2)] = 0.5;
        let phi = 0.7;
        let l_small = gaussian_marginal_oracle(&x, &s, &y, 1e-12, phi).unwrap();
        // fixed-effects REML with X_f = first two columns (null space of s)
        let xf = x.columns(0, 2).into_owned();
        let none: [DMatrix<f64>; 0] = [];
        let b = penalized_ls_oracle(&xf, &none, &[], &y).unwrap();
        let r = &y - &xf * b;
        let xtx = xf.transpose() * &xf;
        let lu = Lu::new(xtx / phi).unwrap();
        let expect = -0.5
            * (n as f64 * phi.ln() + lu.log_abs_det() + r.dot(&r) / phi
                + (n as f64 - 2.0) * (2.0 * std::f64::consts::PI).ln());
        assert!((l_small - expect).abs() < 1e-6, "{l_small} vs {expect}");
    }

    #[test]
    fn marginal_change_of_variables() {
        // y → c·y with τ², φ → c²τ², c²φ shifts l_R by −(n − M_p) log c
        let n = 25;
        let x = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { ((i + j * 5) % 6) as f64 });
        let y = DVector::from_fn(n, |i, _| (i as f64).cos());
        let mut s = DMatrix::zeros(3, 3);
        s[(1, 1)] = 1.0;
        s[(2, 2)] = 1.0;
        let c: f64 = 3.0;
        let a = gaussian_marginal_oracle(&x, &s, &y, 0.4, 1.1).unwrap();
        let b = gaussian_marginal_oracle(&x, &s, &(&y * c), 0.4 * c * c, 1.1 * c * c).unwrap();
        assert!((b - (a - (n as f64 - 1.0) * c.ln())).abs() < 1e-9);
    }

    #[test]
    fn two_level_factor_is_single_coefficient_lrt() {
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let levels = [1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
        let empty = DMatrix::zeros(10, 0);
        let r = glrt_factor_oracle(&y, &levels, 2, &empty, OracleFamily::Binomial).unwrap();
        // group means 0.6 and 0.4: deviance drop from the saturated-by-group fit
        let ll = |p: f64, ones: f64, m: f64| ones * p.ln() + (m - ones) * (1.0 - p).ln();
        let expect = 2.0 * (ll(0.6, 3.0, 5.0) + ll(0.4, 2.0, 5.0) - ll(0.5, 5.0, 10.0));
        assert!((r.statistic - expect).abs() < 1e-8);
        assert_eq!(r.df, 1);
        assert!(!r.separated);
    }

    #[test]
    fn pure_level_is_flagged() {
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let levels = [1, 1, 1, 2, 2, 2, 3, 3, 3];
        let r = glrt_factor_oracle(&y, &levels, 3, &DMatrix::zeros(9, 0), OracleFamily::Binomial).unwrap();
        assert!(r.separated);
    }

    #[test]
    fn result_digest_tracks_inputs() {
        let a = OracleResult::new("x", &[&[1.0, 2.0]], vec![3.0], 1e-8);
        let b = OracleResult::new("x", &[&[1.0, 2.0 + 1e-15]], vec![3.0], 1e-8);
        assert_ne!(a.inputs_digest, b.inputs_digest);
        assert!(a.agrees(&[3.0 + 1e-9]));
        assert!(!a.agrees(&[3.1]));
    }
}
