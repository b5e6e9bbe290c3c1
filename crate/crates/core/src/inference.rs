//! Credible bands, Wald-type tests for smooth terms, and the model summary.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::design::TermKind;
use crate::error::{GamError, Result};
use crate::fitter::{FittedGam, PenalizedProblem};
use crate::linalg::sym_eigen_desc;
use crate::model::ModelSpec;
use crate::smoothness::CriterionKind;

/// Eigenvalues of `V` below this fraction of the largest are dropped.
pub const RANK_TOL: f64 = 1e-10;
/// Absolute quadrature tolerance for the mixture tail probability.
pub const TAIL_TOL: f64 = 1e-8;
const CONTINUOUS_GRID: usize = 50;

/// `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

fn normal_two_sided(z: f64) -> f64 {
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// How the fitted term is centered before reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// As parameterized by the term's own identifiability constraint.
    #[default]
    Constraint,
    /// Count-weighted mean over levels removed (`Σ n_l f_l = 0`).
    Weighted,
    /// Plain mean over levels removed (`Σ f_l = 0`).
    Unweighted,
}

/// Pointwise band for one smooth term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBand {
    pub term: String,
    /// Levels (ordinal/factor) or grid points (continuous).
    pub points: Vec<f64>,
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    pub level: f64,
}

impl IntervalBand {
    pub fn lower(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c - h).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c + h).collect()
    }

    /// Whether `truth[i]` lies inside the band at each point.
    pub fn covers(&self, truth: &[f64]) -> Vec<bool> {
        self.center
            .iter()
            .zip(&self.half_width)
            .zip(truth)
            .map(|((c, h), t)| (t - c).abs() <= *h)
            .collect()
    }
}

fn centering_matrix(k: usize, weights: &DVector<f64>) -> DMatrix<f64> {
    let total: f64 = weights.sum();
    DMatrix::from_fn(k, k, |i, j| f64::from(u8::from(i == j)) - weights[j] / total)
}

/// Evaluation matrix `E` (rows = points, columns = term coefficients).
fn evaluation(problem: &PenalizedProblem, t: usize, centering: Centering) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let block = &problem.terms[t].block;
    let points = block.evaluation_points(CONTINUOUS_GRID);
    let e = block.evaluate(&points)?;
    let e = match (&block.kind, centering) {
        (TermKind::Ordinal(_) | TermKind::Factor { .. }, Centering::Weighted) => {
            centering_matrix(points.len(), &block.constraint_vector) * e
        }
        (TermKind::Ordinal(_) | TermKind::Factor { .. }, Centering::Unweighted) => {
            centering_matrix(points.len(), &DVector::from_element(points.len(), 1.0)) * e
        }
        _ => e,
    };
    Ok((points, e))
}

/// Band `f̂ ± z_{1−α/2} √diag(E V_β,j Eᵀ)` at the term's levels or grid.
pub fn credible_band(problem: &PenalizedProblem, fit: &FittedGam, t: usize, level: f64) -> Result<IntervalBand> {
    credible_band_centered(problem, fit, t, level, Centering::Constraint)
}

pub fn credible_band_centered(
    problem: &PenalizedProblem,
    fit: &FittedGam,
    t: usize,
    level: f64,
    centering: Centering,
) -> Result<IntervalBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(GamError::Spec(format!("interval level must lie in (0, 1), got {level}")));
    }
    let term = problem
        .terms
        .get(t)
        .ok_or_else(|| GamError::NotSmooth(format!("term index {t}")))?;
    let (points, e) = evaluation(problem, t, centering)?;
    let center = &e * fit.term_coefs(problem, t);
    let v = &e * fit.term_vcov(problem, t) * e.transpose();
    let z = normal_quantile(0.5 + level / 2.0);
    Ok(IntervalBand {
        term: term.label.clone(),
        points,
        center: center.iter().copied().collect(),
        half_width: (0..v.nrows()).map(|i| z * v[(i, i)].max(0.0).sqrt()).collect(),
        level,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTestResult {
    pub term: String,
    pub statistic: f64,
    pub edf: f64,
    pub ref_df: f64,
    pub p_value: f64,
    /// Numerical rank of the term's covariance at the evaluation points.
    pub rank: usize,
}

/// `P(χ²_a + ρ χ²₁ > t)` for integer `a ≥ 0` and `ρ ∈ [0, 1)`.
pub fn mixture_tail(t: f64, a: usize, rho: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let sf_a = |x: f64| -> f64 {
        if a == 0 {
            f64::from(u8::from(x < 0.0))
        } else if x <= 0.0 {
            1.0
        } else {
            ChiSquared::new(a as f64).map(|c| c.sf(x)).unwrap_or(f64::NAN)
        }
    };
    if rho <= 0.0 {
        return sf_a(t).clamp(0.0, 1.0);
    }
    // the ρχ²₁ part alone exceeds t
    let head = statrs::function::erf::erfc((t / (2.0 * rho)).sqrt());
    if a == 0 {
        return head.clamp(0.0, 1.0);
    }
    // substitute χ²₁ = s², s ~ N(0,1): ∫ over ρs² ≤ t of SF_a(t − ρs²) 2φ(s) ds
    let upper = (t / rho).sqrt();
    let density = |s: f64| (-0.5 * s * s).exp() * (2.0 / std::f64::consts::PI).sqrt();
    let integrand = |s: f64| sf_a(t - rho * s * s) * density(s);
    let body = adaptive_simpson(&integrand, 0.0, upper, TAIL_TOL);
    (head + body).clamp(0.0, 1.0)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Wald-type test of `H₀: f_j ≡ 0` for smooth term `t`.
///
/// Ordinal terms are evaluated at their `k` levels after count-weighted
/// centering, which makes the statistic independent of the identifiability
/// constraint; continuous terms use the triangular factor of their basis
/// columns. The reference degrees of freedom `ν` are the term's edf clamped
/// to `[null-space dim, rank V]`. The rank-ν pseudo-inverse keeps the `⌊ν⌋`
/// leading eigen-directions of `V` and the next one weighted by `frac(ν)`,
/// and the p-value is the tail of `χ²_⌊ν⌋ + frac(ν)·χ²₁`.
pub fn wald_smooth_test(problem: &PenalizedProblem, fit: &FittedGam, t: usize) -> Result<SmoothTestResult> {
    let term = problem
        .terms
        .get(t)
        .ok_or_else(|| GamError::NotSmooth(format!("term index {t}")))?;
    if !term.is_smooth() {
        return Err(GamError::NotSmooth(term.label.clone()));
    }
    let e = match term.block.kind {
        TermKind::Continuous { .. } => {
            let basis = problem.x.columns(term.cols.start, term.cols.len()).into_owned();
            basis.qr().r()
        }
        _ => evaluation(problem, t, Centering::Weighted)?.1,
    };
    let f = &e * fit.term_coefs(problem, t);
    let v = &e * fit.term_vcov(problem, t) * e.transpose();
    let edf = fit.edf[t];
    let (values, vectors) = sym_eigen_desc(&v);
    let top = values.first().copied().unwrap_or(0.0);
    let null_result = SmoothTestResult {
        term: term.label.clone(),
        statistic: 0.0,
        edf,
        ref_df: edf,
        p_value: 1.0,
        rank: 0,
    };
    if !(top > 1e-9 * fit.scale) {
        return Ok(null_result);
    }
    let rank = values.iter().filter(|&&d| d > RANK_TOL * top).count();
    let mut nu = fit.edf[t].clamp((term.block.null_dim as f64).min(rank as f64), rank as f64);
    if (nu - nu.round()).abs() < 1e-6 {
        nu = nu.round();
    }
    let k0 = nu.floor() as usize;
    let rho = nu - k0 as f64;
    let proj = |i: usize| {
        let c = vectors.column(i).dot(&f);
        c * c / values[i]
    };
    let mut statistic: f64 = (0..k0.min(rank)).map(proj).sum();
    if rho > 0.0 && k0 < rank {
        statistic += rho * proj(k0);
    }
    Ok(SmoothTestResult {
        statistic,
        ref_df: nu,
        p_value: mixture_tail(statistic, k0, rho),
        rank,
        ..null_result
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothRow {
    pub term: String,
    pub edf: f64,
    pub ref_df: f64,
    pub chi_sq: f64,
    pub p_value: f64,
    pub lambda: f64,
}

/// Everything printed by [`SummaryReport::to_text`]; also the JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub family: String,
    pub link: String,
    pub formula: String,
    pub parametric: Vec<ParametricRow>,
    pub smooth: Vec<SmoothRow>,
    pub r_sq_adj: f64,
    pub deviance_explained_pct: f64,
    pub criterion: String,
    pub criterion_value: f64,
    pub scale: f64,
    pub n: usize,
    pub converged: bool,
    pub lambda_at_boundary: bool,
}

/// Inputs to [`summarize`] beyond the fit itself.
#[derive(Debug, Clone)]
pub struct SummaryContext<'a> {
    pub spec: &'a ModelSpec,
    pub criterion: CriterionKind,
    /// `None` when λ was supplied rather than estimated.
    pub criterion_value: Option<f64>,
    pub lambda_at_boundary: bool,
}

/// Assembles the summary: parametric z-tests from the diagonal of `V_β`,
/// the smooth-term table, adjusted R², deviance explained, and the criterion.
pub fn summarize(
    problem: &PenalizedProblem,
    fit: &FittedGam,
    tests: &[SmoothTestResult],
    ctx: &SummaryContext<'_>,
) -> SummaryReport {
    let mut parametric = Vec::new();
    for term in problem.terms.iter().filter(|t| !t.is_smooth()) {
        for (name, col) in term.coef_names().into_iter().zip(term.cols.clone()) {
            let estimate = fit.beta[col];
            let std_error = fit.vcov[(col, col)].max(0.0).sqrt();
            let z_value = estimate / std_error;
            parametric.push(ParametricRow {
                name,
                estimate,
                std_error,
                z_value,
                p_value: normal_two_sided(z_value),
            });
        }
    }
    let smooth = tests
        .iter()
        .map(|r| {
            let t = problem.term_index(&r.term);
            let lambda = t
                .and_then(|t| problem.smooth_terms().iter().position(|&s| s == t))
                .map_or(f64::NAN, |j| fit.lambda[j]);
            SmoothRow {
                term: r.term.clone(),
                edf: r.edf,
                ref_df: r.ref_df,
                chi_sq: r.statistic,
                p_value: r.p_value,
                lambda,
            }
        })
        .collect();
    SummaryReport {
        family: problem.family.name().into(),
        link: problem.family.link_name().into(),
        formula: ctx.spec.formula(),
        parametric,
        smooth,
        r_sq_adj: r_sq_adj(problem, fit),
        deviance_explained_pct: deviance_explained(fit) * 100.0,
        criterion: ctx.criterion.label().into(),
        criterion_value: ctx.criterion_value.unwrap_or(f64::NAN),
        scale: fit.scale,
        n: problem.nobs(),
        converged: fit.converged,
        lambda_at_boundary: ctx.lambda_at_boundary,
    }
}

/// `1 − deviance / null deviance`.
pub fn deviance_explained(fit: &FittedGam) -> f64 {
    1.0 - fit.deviance / fit.null_deviance
}

/// `1 − var(y − μ̂)(n − 1) / (var(y)(n − edf))`, with response residuals.
pub fn r_sq_adj(problem: &PenalizedProblem, fit: &FittedGam) -> f64 {
    let n = problem.nobs() as f64;
    let centered_ss = |v: &DVector<f64>| {
        let m = v.mean();
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
    };
    let resid = &problem.y - &fit.mu;
    1.0 - centered_ss(&resid) * (n - 1.0) / (centered_ss(&problem.y) * (n - fit.edf_total))
}

pub fn signif_stars(p: f64) -> &'static str {
    match p {
        p if p < 0.001 => "***",
        p if p < 0.01 => "**",
        p if p < 0.05 => "*",
        p if p < 0.1 => ".",
        _ => " ",
    }
}

/// p-value in at most seven characters.
pub fn format_pvalue(p: f64) -> String {
    if p.is_nan() {
        "NA".into()
    } else if p < 2e-16 {
        "<2e-16".into()
    } else if p < 1e-3 {
        let s = format!("{p:.1e}");
        // two-digit exponent, e.g. 2.9e-04
        match s.split_once('e') {
            Some((m, e)) => {
                let e: i32 = e.parse().unwrap_or(0);
                format!("{m}e-{:02}", -e)
            }
            None => s,
        }
    } else {
        format!("{p:.4}")
    }
}

fn format_fixed(v: f64, width: usize) -> String {
    for digits in (0..=3).rev() {
        let s = format!("{v:.digits$}");
        if s.len() <= width {
            return s;
        }
    }
    format!("{v:.0}")
}

fn table(names: &[String], headers: &[&str], cells: &[Vec<String>], stars: &[&str]) -> Vec<String> {
    let name_w = names.iter().map(String::len).max().unwrap_or(0);
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(c, h)| cells.iter().map(|r| r[c].len()).max().unwrap_or(0).max(h.len()))
        .collect();
    let mut lines = Vec::with_capacity(names.len() + 1);
    let mut head = format!("{:name_w$}", "");
    for (h, w) in headers.iter().zip(&widths) {
        head.push_str(&format!(" {h:>w$}"));
    }
    lines.push(head);
    for ((name, row), star) in names.iter().zip(cells).zip(stars) {
        let mut line = format!("{name:<name_w$}");
        for (cell, w) in row.iter().zip(&widths) {
            line.push_str(&format!(" {cell:>w$}"));
        }
        line.push(' ');
        line.push_str(star);
        lines.push(line.trim_end().to_string());
    }
    lines
}

const SIGNIF_LEGEND: &str = "Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1";

impl SummaryReport {
    /// Plain-text rendering laid out like a `summary.gam` listing.
    pub fn to_text(&self) -> String {
        let mut out = Vec::new();
        out.push(format!("Family: {}", self.family));
        out.push(format!("Link function: {}", self.link));
        out.push(String::new());
        out.push("Formula:".into());
        out.push(self.formula.clone());
        out.push(String::new());

        out.push("Parametric coefficients:".into());
        let names: Vec<String> = self.parametric.iter().map(|r| r.name.clone()).collect();
        let cells: Vec<Vec<String>> = self
            .parametric
            .iter()
            .map(|r| {
                vec![
                    format!("{:.4}", r.estimate),
                    format_fixed(r.std_error, 10),
                    format_fixed(r.z_value, 7),
                    format_pvalue(r.p_value),
                ]
            })
            .collect();
        let stars: Vec<&str> = self.parametric.iter().map(|r| signif_stars(r.p_value)).collect();
        out.extend(table(
            &names,
            &["Estimate", "Std. Error", "z value", "Pr(>|z|)"],
            &cells,
            &stars,
        ));
        out.push("---".into());
        out.push(SIGNIF_LEGEND.into());
        out.push(String::new());

        if !self.smooth.is_empty() {
            out.push("Approximate significance of smooth terms:".into());
            let names: Vec<String> = self.smooth.iter().map(|r| r.term.clone()).collect();
            let cells: Vec<Vec<String>> = self
                .smooth
                .iter()
                .map(|r| {
                    vec![
                        format!("{:.3}", r.edf),
                        format_fixed(r.ref_df, 6),
                        format_fixed(r.chi_sq, 6),
                        format_pvalue(r.p_value),
                    ]
                })
                .collect();
            let stars: Vec<&str> = self.smooth.iter().map(|r| signif_stars(r.p_value)).collect();
            out.extend(table(&names, &["edf", "Ref.df", "Chi.sq", "p-value"], &cells, &stars));
            out.push("---".into());
            out.push(SIGNIF_LEGEND.into());
            out.push(String::new());
        }

        out.push(format!(
            "R-sq.(adj) = {:>6.3}   Deviance explained = {:>5.1}%",
            self.r_sq_adj, self.deviance_explained_pct
        ));
        let crit = if self.criterion_value.is_nan() {
            "NA (fixed lambda)".to_string()
        } else {
            format!("{:.3}", self.criterion_value)
        };
        out.push(format!(
            "{} = {}  Scale est. = {:<9}  n = {}",
            self.criterion,
            crit,
            format!("{:.5}", self.scale).trim_end_matches('0').trim_end_matches('.'),
            self.n
        ));
        if !self.converged {
            out.push("Warning: PIRLS did not converge".into());
        }
        if self.lambda_at_boundary {
            out.push("Note: a smoothing parameter reached the edge of its search range".into());
        }
        out.push(String::new());
        out.join("\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
