//! Smoothing-parameter selection by restricted (or ordinary) marginal
//! likelihood.
//!
//! Reading the penalty as a Gaussian prior `β ~ N(0, φS_λ⁻)`, with a flat
//! prior on the penalty null space, and integrating the coefficients out
//! gives (Laplace-approximate for non-Gaussian families)
//!
//! ```text
//! 2V_R(λ) = −2l(β̂) + β̂ᵀS_λβ̂/φ + log|XᵀWX + S_λ| − log|S_λ|₊ − M_p log(2πφ)
//! ```
//!
//! where `M_p` counts unpenalized directions (intercept, parametric columns,
//! penalty null spaces). For the Gaussian family this is the exact
//! restricted likelihood of the equivalent linear mixed model with random
//! effects `u ~ N(0, τ²Λ⁻¹)`, `τ² = φ/λ`; the dispersion is profiled out
//! analytically unless it is fixed on the problem.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::family::Family;
use crate::fitter::{pirls_fit, FittedGam, PenalizedProblem};

pub const LOG_LAMBDA_MIN: f64 = -12.0;
pub const LOG_LAMBDA_MAX: f64 = 12.0;
/// Convergence tolerance on log-λ.
pub const LOG_LAMBDA_TOL: f64 = 1e-3;
const MAX_CYCLES: usize = 50;
const SCAN_STEP: f64 = 2.0;
const BOUNDARY_MARGIN: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    #[default]
    Reml,
    Ml,
}

impl CriterionKind {
    /// Label used in summaries, e.g. `-REML`.
    pub fn label(&self) -> &'static str {
        match self {
            CriterionKind::Reml => "-REML",
            CriterionKind::Ml => "-ML",
        }
    }
}

/// Criterion value (negative log marginal likelihood) and the nested fit.
#[derive(Debug, Clone)]
pub struct CriterionEval {
    pub value: f64,
    /// Dispersion used inside the criterion (profiled for Gaussian).
    pub scale: f64,
    pub fit: FittedGam,
}

/// Smoothing parameter of a variance component: `λ = φ/τ²`.
pub fn lambda_from_variance(tau2: f64, scale: f64) -> f64 {
    scale / tau2
}

pub fn variance_from_lambda(lambda: f64, scale: f64) -> f64 {
    scale / lambda
}

/// Evaluates the chosen criterion at `log_lambda`, refitting by PIRLS.
pub fn criterion(problem: &PenalizedProblem, log_lambda: &[f64], kind: CriterionKind) -> Result<CriterionEval> {
    let lambda: Vec<f64> = log_lambda.iter().map(|l| l.exp()).collect();
    let fit = pirls_fit(problem, &lambda)?;
    let (value, scale) = criterion_at_fit(problem, &fit, kind);
    Ok(CriterionEval { value, scale, fit })
}

/// Criterion for an existing fit.
pub fn criterion_at_fit(problem: &PenalizedProblem, fit: &FittedGam, kind: CriterionKind) -> (f64, f64) {
    let n = problem.nobs() as f64;
    let p = problem.ncoef();
    let (log_s, rank) = problem.penalty_log_pdet(&fit.lambda);
    let m_p = (p - rank) as f64;
    let rss_pen = fit.deviance + fit.penalty;

    let log_h = match kind {
        CriterionKind::Reml => fit.log_det_hessian,
        CriterionKind::Ml => {
            let u = problem.penalty_range_basis(&fit.lambda);
            if u.ncols() == 0 {
                0.0
            } else {
                let huu = u.tr_mul(&(&fit.hessian * &u));
                huu.cholesky()
                    .map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
                    .unwrap_or(f64::INFINITY)
            }
        }
    };
    let fixed_dims = match kind {
        CriterionKind::Reml => m_p,
        CriterionKind::Ml => 0.0,
    };

    let (minus2l_plus_pen, scale) = match (problem.family, problem.fixed_scale) {
        (Family::Binomial, _) => (fit.deviance + fit.penalty, 1.0),
        (Family::Gaussian, Some(phi)) => (rss_pen / phi + n * (2.0 * std::f64::consts::PI * phi).ln(), phi),
        (Family::Gaussian, None) => {
            let phi = rss_pen / (n - fixed_dims);
            ((n - fixed_dims) + n * (2.0 * std::f64::consts::PI * phi).ln(), phi)
        }
    };
    let two_v = minus2l_plus_pen + log_h - log_s - fixed_dims * (2.0 * std::f64::consts::PI * scale).ln();
    (0.5 * two_v, scale)
}

/// Negative restricted log marginal likelihood at `log_lambda`; lower is better.
pub fn reml_criterion(problem: &PenalizedProblem, log_lambda: &[f64]) -> Result<f64> {
    criterion(problem, log_lambda, CriterionKind::Reml).map(|e| e.value)
}

/// Result of smoothing-parameter selection.
#[derive(Debug, Clone)]
pub struct SmoothnessFit {
    pub kind: CriterionKind,
    pub log_lambda: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Criterion at the optimum.
    pub value: f64,
    pub fit: FittedGam,
    /// Per smooth: optimum pinned to the edge of the log-λ box.
    pub at_boundary: Vec<bool>,
    pub evaluations: usize,
}

impl SmoothnessFit {
    pub fn hit_boundary(&self) -> bool {
        self.at_boundary.iter().any(|b| *b)
    }
}

struct Objective<'a> {
    problem: &'a PenalizedProblem,
    kind: CriterionKind,
    evaluations: usize,
}

impl Objective<'_> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        match criterion(self.problem, x, self.kind) {
            Ok(e) if e.value.is_finite() => e.value,
            _ => f64::INFINITY,
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of `f` on `[lo, hi]`; returns the best point
/// seen (endpoints included via `f_lo`/`f_hi` when supplied).
fn golden_section(f: &mut impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo) > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn coordinate_search(obj: &mut Objective<'_>, d: usize) -> Vec<f64> {
    let mut x = vec![0.0; d];
    let mut fx = obj.eval(&x);
    // coarse scans run on the first cycle and again once the local search
    // settles, since moving one λ can open a better basin for another
    let mut scan = true;
    for _ in 0..MAX_CYCLES {
        let mut max_move: f64 = 0.0;
        for j in 0..d {
            let start = x[j];
            let mut line = |v: f64| {
                let mut trial = x.clone();
                trial[j] = v;
                obj.eval(&trial)
            };
            let (lo, hi) = if scan {
                let mut best = (x[j], fx);
                let mut g = LOG_LAMBDA_MIN;
                while g <= LOG_LAMBDA_MAX + 1e-12 {
                    let fg = line(g);
                    if fg < best.1 {
                        best = (g, fg);
                    }
                    g += SCAN_STEP;
                }
                (
                    (best.0 - SCAN_STEP).max(LOG_LAMBDA_MIN),
                    (best.0 + SCAN_STEP).min(LOG_LAMBDA_MAX),
                )
            } else {
                ((x[j] - 0.5).max(LOG_LAMBDA_MIN), (x[j] + 0.5).min(LOG_LAMBDA_MAX))
            };
            let (mut lo, mut hi) = (lo, hi);
            let mut best = (x[j], fx);
            for _ in 0..24 {
                let (xm, fm) = golden_section(&mut line, lo, hi, LOG_LAMBDA_TOL);
                if fm < best.1 {
                    best = (xm, fm);
                }
                // slide the window when the minimum sits on an interior edge
                let width = hi - lo;
                if xm - lo < 2.0 * LOG_LAMBDA_TOL && lo > LOG_LAMBDA_MIN {
                    hi = lo + LOG_LAMBDA_TOL;
                    lo = (lo - width).max(LOG_LAMBDA_MIN);
                } else if hi - xm < 2.0 * LOG_LAMBDA_TOL && hi < LOG_LAMBDA_MAX {
                    lo = hi - LOG_LAMBDA_TOL;
                    hi = (hi + width).min(LOG_LAMBDA_MAX);
                } else {
                    break;
                }
            }
            // the box edges are candidates in their own right
            for edge in [LOG_LAMBDA_MIN, LOG_LAMBDA_MAX] {
                if (best.0 - edge).abs() < 2.0 * LOG_LAMBDA_TOL + 0.5 && (best.0 - edge).abs() > 0.0 {
                    let fe = line(edge);
                    if fe < best.1 {
                        best = (edge, fe);
                    }
                }
            }
            if best.1 < fx {
                x[j] = best.0;
                fx = best.1;
            }
            max_move = max_move.max((x[j] - start).abs());
        }
        if max_move < LOG_LAMBDA_TOL {
            if scan {
                break;
            }
            scan = true;
        } else {
            scan = false;
        }
    }
    x
}

fn nelder_mead(obj: &mut Objective<'_>, d: usize) -> Vec<f64> {
    let clamp = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|e| e.clamp(LOG_LAMBDA_MIN, LOG_LAMBDA_MAX)).collect() };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let x0 = vec![0.0; d];
    let f0 = obj.eval(&x0);
    simplex.push((x0.clone(), f0));
    for j in 0..d {
        let mut v = x0.clone();
        v[j] += 2.0;
        let fv = obj.eval(&v);
        simplex.push((v, fv));
    }
    for _ in 0..200 * d {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < LOG_LAMBDA_TOL && spread.abs() < 1e-8 * (1.0 + simplex[0].1.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(v, _)| v[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> {
            clamp(centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect())
        };
        let xr = along(1.0);
        let fr = obj.eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = obj.eval(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let xc = if fr < worst.1 { along(0.5) } else { along(-0.5) };
            let fc = obj.eval(&xc);
            if fc < worst.1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = s.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let fv = obj.eval(&v);
                    *s = (v, fv);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0).0
}

/// Minimizes the criterion over `log λ ∈ [−12, 12]` per smooth.
///
/// Up to three smooths are handled by cyclic coordinate-wise golden-section
/// search (after a coarse scan), more by Nelder–Mead on the joint vector.
/// The returned fit is exactly `pirls_fit(problem, λ̂)`.
pub fn optimize_lambda(problem: &PenalizedProblem, kind: CriterionKind) -> Result<SmoothnessFit> {
    let d = problem.n_smooths();
    let mut obj = Objective {
        problem,
        kind,
        evaluations: 0,
    };
    let x = match d {
        0 => Vec::new(),
        1..=3 => coordinate_search(&mut obj, d),
        _ => nelder_mead(&mut obj, d),
    };
    let eval = criterion(problem, &x, kind)?;
    let at_boundary = x
        .iter()
        .map(|v| v - LOG_LAMBDA_MIN < BOUNDARY_MARGIN || LOG_LAMBDA_MAX - v < BOUNDARY_MARGIN)
        .collect();
    Ok(SmoothnessFit {
        kind,
        lambda: x.iter().map(|v| v.exp()).collect(),
        log_lambda: x,
        value: eval.value,
        fit: eval.fit,
        at_boundary,
        evaluations: obj.evaluations + 1,
    })
}
