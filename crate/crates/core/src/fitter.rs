//! Penalized iteratively reweighted least squares for fixed smoothing
//! parameters.
//!
//! The fitter minimizes `D(β) + Σ_j λ_j βᵀS_jβ`, the penalized deviance,
//! which is `−2φ` times the penalized log-likelihood `l(β) − Σ_j λ_j βᵀS_jβ / (2φ)`.
//! At convergence `β̂` solves `(XᵀWX + S_λ)β = XᵀWz`, the Bayesian posterior
//! covariance is `V_β = φ(XᵀWX + S_λ)⁻¹`, and effective degrees of freedom are
//! block traces of `F = (XᵀWX + S_λ)⁻¹XᵀWX`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::design::{build_parametric_block, DesignBlock, TermKind};
use crate::error::{GamError, Result};
use crate::family::Family;
use crate::linalg::{factorize_spd, weighted_crossprod, weighted_tr_mul};

pub const MAX_PIRLS_ITER: usize = 100;
/// Relative change in penalized deviance that ends the PIRLS loop.
pub const PIRLS_TOL: f64 = 1e-8;
const MAX_STEP_HALVINGS: usize = 10;

/// A model term and the columns it occupies in the full design.
#[derive(Debug, Clone)]
pub struct Term {
    pub label: String,
    pub column: String,
    pub block: DesignBlock,
    pub cols: Range<usize>,
}

impl Term {
    pub fn new(label: String, column: String, block: DesignBlock) -> Self {
        Self {
            label,
            column,
            block,
            cols: 0..0,
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.block.is_penalized()
    }

    /// Names of the individual coefficients, as shown in coefficient tables.
    pub fn coef_names(&self) -> Vec<String> {
        match &self.block.kind {
            TermKind::Parametric => vec![self.label.clone()],
            TermKind::Factor { k } => (2..=*k).map(|l| format!("{}{}", self.label, l)).collect(),
            _ => (1..=self.cols.len())
                .map(|i| format!("{}.{}", self.label, i))
                .collect(),
        }
    }
}

/// Response, full design, and per-term penalties.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub family: Family,
    pub offset: DVector<f64>,
    /// Terms in column order; the first is always the intercept.
    pub terms: Vec<Term>,
    /// Known dispersion; `None` estimates it for the Gaussian family.
    pub fixed_scale: Option<f64>,
    smooth_terms: Vec<usize>,
    gaussian_xtx: Option<DMatrix<f64>>,
}

impl PenalizedProblem {
    /// Prepends an intercept to `terms` and stacks their bases.
    pub fn new(y: Vec<f64>, family: Family, terms: Vec<Term>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(GamError::Dimension("no observations".into()));
        }
        family.validate_response(&y)?;
        let mut all = Vec::with_capacity(terms.len() + 1);
        all.push(Term::new(
            "(Intercept)".into(),
            "(Intercept)".into(),
            build_parametric_block(&vec![1.0; n]),
        ));
        all.extend(terms);
        let mut start = 0;
        for t in &mut all {
            if t.block.basis.nrows() != n {
                return Err(GamError::Dimension(format!(
                    "term {} has {} rows, response has {n}",
                    t.label,
                    t.block.basis.nrows()
                )));
            }
            t.cols = start..start + t.block.ncols();
            start = t.cols.end;
        }
        let mut x = DMatrix::zeros(n, start);
        for t in &all {
            x.columns_mut(t.cols.start, t.cols.len()).copy_from(&t.block.basis);
        }
        let smooth_terms = all
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_smooth())
            .map(|(i, _)| i)
            .collect();
        let gaussian_xtx = (family == Family::Gaussian).then(|| x.tr_mul(&x));
        Ok(Self {
            x,
            y: DVector::from_vec(y),
            family,
            offset: DVector::zeros(n),
            terms: all,
            fixed_scale: None,
            smooth_terms,
            gaussian_xtx,
        })
    }

    pub fn with_fixed_scale(mut self, scale: f64) -> Self {
        self.fixed_scale = Some(scale);
        self
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Result<Self> {
        if offset.len() != self.nobs() {
            return Err(GamError::Dimension("offset length".into()));
        }
        self.offset = DVector::from_vec(offset);
        Ok(self)
    }

    pub fn nobs(&self) -> usize {
        self.y.len()
    }

    pub fn ncoef(&self) -> usize {
        self.x.ncols()
    }

    /// Indices into `terms` of the penalized terms, in order; smoothing
    /// parameter `j` belongs to `terms[smooth_terms()[j]]`.
    pub fn smooth_terms(&self) -> &[usize] {
        &self.smooth_terms
    }

    pub fn n_smooths(&self) -> usize {
        self.smooth_terms.len()
    }

    pub fn term_index(&self, label: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.label == label)
    }

    pub(crate) fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.n_smooths() {
            return Err(GamError::LambdaCount {
                expected: self.n_smooths(),
                got: lambda.len(),
            });
        }
        if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(GamError::InvalidLambda);
        }
        Ok(())
    }

    /// Penalty of smooth `j` zero-padded to `p × p`.
    pub fn embedded_penalty(&self, j: usize) -> DMatrix<f64> {
        let t = &self.terms[self.smooth_terms[j]];
        let p = self.ncoef();
        let mut s = DMatrix::zeros(p, p);
        s.view_mut((t.cols.start, t.cols.start), (t.cols.len(), t.cols.len()))
            .copy_from(&t.block.penalty);
        s
    }

    /// `S_λ = Σ_j λ_j S_j`.
    pub fn penalty_matrix(&self, lambda: &[f64]) -> DMatrix<f64> {
        let p = self.ncoef();
        let mut s = DMatrix::zeros(p, p);
        for (&ti, &l) in self.smooth_terms.iter().zip(lambda) {
            let t = &self.terms[ti];
            let mut view = s.view_mut((t.cols.start, t.cols.start), (t.cols.len(), t.cols.len()));
            view += &t.block.penalty * l;
        }
        s
    }

    /// `(log|S_λ|₊, rank(S_λ))`, using the block-diagonal structure.
    pub fn penalty_log_pdet(&self, lambda: &[f64]) -> (f64, usize) {
        let mut log_det = 0.0;
        let mut rank = 0;
        for (&ti, &l) in self.smooth_terms.iter().zip(lambda) {
            if l > 0.0 {
                let eig = &self.terms[ti].block.penalty_eigenvalues;
                rank += eig.len();
                log_det += eig.iter().map(|e| (e * l).ln()).sum::<f64>();
            }
        }
        (log_det, rank)
    }

    /// Orthonormal `p × r` basis of the range of `S_λ` (for `λ > 0`).
    pub fn penalty_range_basis(&self, lambda: &[f64]) -> DMatrix<f64> {
        let p = self.ncoef();
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for (&ti, &l) in self.smooth_terms.iter().zip(lambda) {
            if l <= 0.0 {
                continue;
            }
            let t = &self.terms[ti];
            for c in 0..t.block.penalty_rank() {
                let mut v = DVector::zeros(p);
                v.rows_mut(t.cols.start, t.cols.len())
                    .copy_from(&t.block.penalty_eigenvectors.column(c));
                cols.push(v);
            }
        }
        if cols.is_empty() {
            DMatrix::zeros(p, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    }

    /// Gaussian `XᵀX`, computed once per problem.
    fn crossprod(&self, w: &DVector<f64>) -> DMatrix<f64> {
        match &self.gaussian_xtx {
            Some(xtx) => xtx.clone(),
            None => weighted_crossprod(&self.x, w),
        }
    }
}

/// A converged (or flagged) penalized fit at fixed smoothing parameters.
#[derive(Debug, Clone)]
pub struct FittedGam {
    pub beta: DVector<f64>,
    /// Bayesian posterior covariance `φ(XᵀWX + S_λ)⁻¹`.
    pub vcov: DMatrix<f64>,
    pub lambda: Vec<f64>,
    /// Effective degrees of freedom of every term, aligned with `problem.terms`.
    pub edf: Vec<f64>,
    pub edf_total: f64,
    pub deviance: f64,
    pub null_deviance: f64,
    /// `β̂ᵀS_λβ̂`.
    pub penalty: f64,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub scale: f64,
    pub converged: bool,
    pub iterations: usize,
    pub ridge_rescued: bool,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    pub weights: DVector<f64>,
    /// Penalized deviance after each PIRLS iteration.
    pub pdev_trace: Vec<f64>,
    /// `XᵀWX + S_λ` at convergence and its log-determinant.
    pub hessian: DMatrix<f64>,
    pub log_det_hessian: f64,
}

impl FittedGam {
    /// Coefficients of term `t`.
    pub fn term_coefs(&self, problem: &PenalizedProblem, t: usize) -> DVector<f64> {
        let cols = &problem.terms[t].cols;
        self.beta.rows(cols.start, cols.len()).into_owned()
    }

    /// Posterior covariance block of term `t`.
    pub fn term_vcov(&self, problem: &PenalizedProblem, t: usize) -> DMatrix<f64> {
        let c = &problem.terms[t].cols;
        self.vcov
            .view((c.start, c.start), (c.len(), c.len()))
            .into_owned()
    }
}

/// `l(β) − Σ_j λ_j βᵀS_jβ / (2φ)`; reduces to `l(β)` when every `λ_j = 0`.
pub fn penalized_loglik(
    beta: &DVector<f64>,
    problem: &PenalizedProblem,
    lambda: &[f64],
    scale: f64,
) -> Result<f64> {
    problem.check_lambda(lambda)?;
    if beta.len() != problem.ncoef() {
        return Err(GamError::Dimension(format!(
            "beta has {} entries, design has {} columns",
            beta.len(),
            problem.ncoef()
        )));
    }
    let eta = &problem.x * beta + &problem.offset;
    let mu = problem.family.inverse_link(&eta);
    let s = problem.penalty_matrix(lambda);
    let pen = beta.dot(&(&s * beta));
    Ok(problem.family.loglik(&problem.y, &mu, scale) - pen / (2.0 * scale))
}

struct Trial {
    eta: DVector<f64>,
    mu: DVector<f64>,
    pdev: f64,
}

fn evaluate(problem: &PenalizedProblem, s: &DMatrix<f64>, beta: &DVector<f64>) -> Trial {
    let eta = &problem.x * beta + &problem.offset;
    let mu = problem.family.inverse_link(&eta);
    let pdev = problem.family.deviance(&problem.y, &mu) + beta.dot(&(s * beta));
    Trial { eta, mu, pdev }
}

fn null_deviance(problem: &PenalizedProblem) -> f64 {
    let n = problem.nobs() as f64;
    let ybar = problem.y.sum() / n;
    let mu = DVector::from_element(problem.nobs(), ybar);
    problem.family.deviance(&problem.y, &mu)
}

/// Fits the model at fixed smoothing parameters `lambda` (one per smooth).
///
/// Non-convergence within [`MAX_PIRLS_ITER`] iterations is reported through
/// `converged = false`; a Hessian that stays singular after the ridge
/// rescue is an error.
pub fn pirls_fit(problem: &PenalizedProblem, lambda: &[f64]) -> Result<FittedGam> {
    problem.check_lambda(lambda)?;
    let family = problem.family;
    let y = &problem.y;
    let s = problem.penalty_matrix(lambda);

    let mut mu = y.map(|v| family.initial_mean(v));
    let mut eta = mu.map(|m| family.link(m));
    let mut beta: Option<DVector<f64>> = None;
    let mut pdev_old = f64::INFINITY;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut ridge_rescued = false;

    for iter in 1..=MAX_PIRLS_ITER {
        iterations = iter;
        let n = y.len();
        let mut z = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let (zi, wi) = family.working(y[i], mu[i], eta[i]);
            z[i] = zi - problem.offset[i];
            w[i] = wi;
        }
        let h = problem.crossprod(&w) + &s;
        let fact = factorize_spd(&h).ok_or(GamError::SingularHessian)?;
        ridge_rescued |= fact.ridged;
        let mut beta_new = fact.chol.solve(&weighted_tr_mul(&problem.x, &w, &z));
        let mut trial = evaluate(problem, &s, &beta_new);

        if let Some(old) = &beta {
            let mut halvings = 0;
            while !(trial.pdev <= pdev_old + 1e-10 * pdev_old.abs()) && halvings < MAX_STEP_HALVINGS {
                beta_new = (old + &beta_new) * 0.5;
                trial = evaluate(problem, &s, &beta_new);
                halvings += 1;
            }
        }

        let change = (trial.pdev - pdev_old).abs() / (trial.pdev.abs() + 0.1);
        trace.push(trial.pdev);
        beta = Some(beta_new);
        eta = trial.eta;
        mu = trial.mu;
        if family == Family::Gaussian || change < PIRLS_TOL {
            converged = true;
            break;
        }
        pdev_old = trial.pdev;
    }

    let beta = beta.expect("at least one PIRLS iteration");
    let n = y.len();
    let mut w = DVector::zeros(n);
    for i in 0..n {
        w[i] = family.working(y[i], mu[i], eta[i]).1;
    }
    let xtwx = problem.crossprod(&w);
    let hessian = &xtwx + &s;
    let fact = factorize_spd(&hessian).ok_or(GamError::SingularHessian)?;
    ridge_rescued |= fact.ridged;
    let log_det_hessian = fact.log_det();
    let h_inv = fact.chol.inverse();
    let f = &h_inv * &xtwx;

    let edf: Vec<f64> = problem
        .terms
        .iter()
        .map(|t| t.cols.clone().map(|c| f[(c, c)]).sum())
        .collect();
    let edf_total: f64 = edf.iter().sum();
    let deviance = family.deviance(y, &mu);
    let scale = match (family, problem.fixed_scale) {
        (Family::Binomial, _) => 1.0,
        (Family::Gaussian, Some(phi)) => phi,
        (Family::Gaussian, None) => deviance / (n as f64 - edf_total).max(1.0),
    };
    let penalty = beta.dot(&(&s * &beta));
    let loglik = family.loglik(y, &mu, scale);

    Ok(FittedGam {
        vcov: h_inv * scale,
        lambda: lambda.to_vec(),
        edf,
        edf_total,
        deviance,
        null_deviance: null_deviance(problem),
        penalty,
        loglik,
        penalized_loglik: loglik - penalty / (2.0 * scale),
        scale,
        converged,
        iterations,
        ridge_rescued,
        eta,
        mu,
        weights: w,
        pdev_trace: trace,
        hessian,
        log_det_hessian,
        beta,
    })
}

/// Effective degrees of freedom of each smooth term, in smoothing-parameter order.
pub fn edf_per_term(problem: &PenalizedProblem, fit: &FittedGam) -> Vec<f64> {
    problem.smooth_terms().iter().map(|&t| fit.edf[t]).collect()
}
