//! Basis matrices, difference penalties, and identifiability transforms.
//!
//! Ordinal predictors use the dummy basis (one indicator per level) with a
//! squared difference penalty of order 1 or 2 on adjacent coefficients.
//! Continuous predictors use a cubic P-spline. Every smooth block absorbs a
//! linear constraint `cᵀβ = 0` through a transform `Z` whose columns span the
//! orthogonal complement of `c`, so the fitted coefficients live in `γ` with
//! `β = Zγ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GamError, Result};
use crate::linalg::sym_eigen_desc;

/// Relative eigenvalue threshold used to count penalty null-space directions.
pub const NULL_SPACE_TOL: f64 = 1e-9;

/// How the sum of an ordinal term's dummy coefficients is pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// `Σ_l n_l β_l = 0`, i.e. the fitted term sums to zero over the data.
    #[default]
    SumToZero,
    /// `β_1 = 0`: level 1 is the reference category.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrdinalTermSpec {
    pub k: usize,
    pub order: usize,
    #[serde(default)]
    pub constraint: Constraint,
}

impl OrdinalTermSpec {
    pub fn new(k: usize, order: usize) -> Result<Self> {
        let spec = Self {
            k,
            order,
            constraint: Constraint::SumToZero,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = constraint;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.order) {
            return Err(GamError::Spec(format!(
                "ordinal penalty order must be 1 or 2, got {}",
                self.order
            )));
        }
        if self.k < 3 {
            return Err(GamError::PenaltyOrder {
                order: self.order,
                needed: 3,
                got: self.k,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTermSpec {
    /// Number of B-spline basis functions before the centering constraint.
    pub q: usize,
    pub degree: usize,
    pub order: usize,
}

impl Default for ContinuousTermSpec {
    fn default() -> Self {
        Self {
            q: 10,
            degree: 3,
            order: 2,
        }
    }
}

impl ContinuousTermSpec {
    pub fn with_q(q: usize) -> Self {
        Self {
            q,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < self.degree + 2 {
            return Err(GamError::Spec(format!(
                "spline basis dimension {} must be at least degree + 2 = {}",
                self.q,
                self.degree + 2
            )));
        }
        if self.order == 0 || self.order >= self.q {
            return Err(GamError::PenaltyOrder {
                order: self.order,
                needed: self.order + 1,
                got: self.q,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TermKind {
    Parametric,
    Ordinal(OrdinalTermSpec),
    /// Unpenalized dummy coding with level 1 as reference.
    Factor { k: usize },
    Continuous {
        spec: ContinuousTermSpec,
        basis: BSplineBasis,
    },
}

/// One term's columns in the constrained parameterization.
#[derive(Debug, Clone)]
pub struct DesignBlock {
    /// `n × p_j` basis after constraint absorption.
    pub basis: DMatrix<f64>,
    /// `p_j × p_j` penalty in the constrained parameterization (zero when
    /// the term is unpenalized).
    pub penalty: DMatrix<f64>,
    /// `q_j × p_j` map from constrained to original coefficients.
    pub transform: DMatrix<f64>,
    /// Constraint vector `c` with `cᵀ transform = 0`.
    pub constraint_vector: DVector<f64>,
    pub null_dim: usize,
    /// Strictly positive eigenvalues of `penalty`.
    pub penalty_eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors of `penalty`, positive eigenvalues first.
    pub penalty_eigenvectors: DMatrix<f64>,
    pub kind: TermKind,
}

impl DesignBlock {
    pub fn ncols(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_penalized(&self) -> bool {
        matches!(self.kind, TermKind::Ordinal(_) | TermKind::Continuous { .. })
    }

    pub fn penalty_rank(&self) -> usize {
        self.penalty_eigenvalues.len()
    }

    /// Basis rows at arbitrary covariate values, in the constrained
    /// parameterization. Ordinal/factor values are level labels.
    pub fn evaluate(&self, values: &[f64]) -> Result<DMatrix<f64>> {
        match &self.kind {
            TermKind::Parametric => Ok(DMatrix::from_column_slice(values.len(), 1, values)),
            TermKind::Ordinal(OrdinalTermSpec { k, .. }) | TermKind::Factor { k } => {
                let levels = levels_from_values(values, *k)?;
                Ok(build_dummy_basis(&levels, *k)? * &self.transform)
            }
            TermKind::Continuous { basis, .. } => Ok(basis.evaluate(values) * &self.transform),
        }
    }

    /// Evaluation matrix at the natural evaluation points: every level for
    /// ordinal/factor terms, an equally spaced grid for continuous terms.
    pub fn evaluation_points(&self, grid_size: usize) -> Vec<f64> {
        match &self.kind {
            TermKind::Ordinal(OrdinalTermSpec { k, .. }) | TermKind::Factor { k } => {
                (1..=*k).map(|l| l as f64).collect()
            }
            TermKind::Continuous { basis, .. } => {
                let (lo, hi) = basis.range();
                let g = grid_size.max(2);
                (0..g)
                    .map(|i| lo + (hi - lo) * i as f64 / (g - 1) as f64)
                    .collect()
            }
            TermKind::Parametric => vec![1.0],
        }
    }
}

/// Converts numeric level labels into 1-based level indices.
pub fn levels_from_values(values: &[f64], k: usize) -> Result<Vec<usize>> {
    values
        .iter()
        .enumerate()
        .map(|(row, &v)| {
            if v.fract() == 0.0 && v >= 1.0 && v <= k as f64 {
                Ok(v as usize)
            } else {
                Err(GamError::InvalidLevel { row, level: v, k })
            }
        })
        .collect()
}

/// `n × k` indicator matrix with a single 1 in column `levels[i] - 1` of row `i`.
pub fn build_dummy_basis(levels: &[usize], k: usize) -> Result<DMatrix<f64>> {
    let mut b = DMatrix::zeros(levels.len(), k);
    for (row, &level) in levels.iter().enumerate() {
        if level == 0 || level > k {
            return Err(GamError::InvalidLevel {
                row,
                level: level as f64,
                k,
            });
        }
        b[(row, level - 1)] = 1.0;
    }
    Ok(b)
}

/// Number of observations at each level.
pub fn level_counts(levels: &[usize], k: usize) -> DVector<f64> {
    let mut counts = DVector::zeros(k);
    for &l in levels {
        counts[l - 1] += 1.0;
    }
    counts
}

/// `(k − m) × k` matrix of order-`m` differences.
pub fn build_diff_matrix(k: usize, m: usize) -> Result<DMatrix<f64>> {
    if k <= m {
        return Err(GamError::PenaltyOrder {
            order: m,
            needed: m + 1,
            got: k,
        });
    }
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..m {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, k, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    Ok(d)
}

/// Sum of squared order-`m` differences of `beta`.
pub fn penalty_value(beta: &[f64], m: usize) -> Result<f64> {
    if beta.len() <= m {
        return Err(GamError::PenaltyOrder {
            order: m,
            needed: m + 1,
            got: beta.len(),
        });
    }
    let mut diffs = beta.to_vec();
    for _ in 0..m {
        diffs = diffs.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(diffs.iter().map(|d| d * d).sum())
}

/// `DᵀD` for the order-`m` difference matrix.
pub fn difference_penalty(k: usize, m: usize) -> Result<DMatrix<f64>> {
    let d = build_diff_matrix(k, m)?;
    Ok(d.tr_mul(&d))
}

/// Orthonormal basis (`k × (k−1)`) of the complement of `c`, from the
/// Householder reflection that maps `c` onto the first axis.
fn householder_complement(c: &DVector<f64>) -> Result<DMatrix<f64>> {
    let norm = c.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(GamError::DegenerateConstraint);
    }
    let k = c.len();
    let mut v = c.clone();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vtv = v.dot(&v);
    let h = DMatrix::<f64>::identity(k, k) - (&v * v.transpose()) * (2.0 / vtv);
    Ok(h.columns(1, k - 1).into_owned())
}

fn reference_transform(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k - 1, |i, j| if i == j + 1 { 1.0 } else { 0.0 })
}

fn finish_block(
    basis: DMatrix<f64>,
    penalty: DMatrix<f64>,
    transform: DMatrix<f64>,
    constraint_vector: DVector<f64>,
    kind: TermKind,
) -> DesignBlock {
    let penalized = matches!(kind, TermKind::Ordinal(_) | TermKind::Continuous { .. });
    let (vals, vecs) = sym_eigen_desc(&penalty);
    let max = vals.first().copied().unwrap_or(0.0).max(0.0);
    let rank = if penalized {
        vals.iter().filter(|&&v| v > NULL_SPACE_TOL * max && max > 0.0).count()
    } else {
        0
    };
    DesignBlock {
        null_dim: basis.ncols() - rank,
        penalty_eigenvalues: vals[..rank].to_vec(),
        penalty_eigenvectors: vecs,
        basis,
        penalty,
        transform,
        constraint_vector,
        kind,
    }
}

/// Absorbs the weighted sum-to-zero constraint `Σ_l w_l β_l = 0` into a
/// basis/penalty pair: returns `B̃ = BZ`, `S̃ = ZᵀSZ` with `wᵀZ = 0`.
pub fn absorb_constraint(
    basis: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    weights: &DVector<f64>,
    kind: TermKind,
) -> Result<DesignBlock> {
    let q = basis.ncols();
    if penalty.nrows() != q || penalty.ncols() != q || weights.len() != q {
        return Err(GamError::Dimension(format!(
            "basis has {q} columns, penalty is {}x{}, weights has {}",
            penalty.nrows(),
            penalty.ncols(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(GamError::Spec("constraint weights must be non-negative".into()));
    }
    let z = householder_complement(weights)?;
    let b = basis * &z;
    let s = z.tr_mul(&(penalty * &z));
    let s = (&s + s.transpose()) * 0.5;
    Ok(finish_block(b, s, z, weights.clone(), kind))
}

/// Ordinal smooth: dummy basis, order-`m` difference penalty, and the
/// requested identifiability constraint.
pub fn build_ordinal_block(levels: &[usize], spec: OrdinalTermSpec) -> Result<DesignBlock> {
    spec.validate()?;
    let b = build_dummy_basis(levels, spec.k)?;
    let s = difference_penalty(spec.k, spec.order)?;
    let counts = level_counts(levels, spec.k);
    match spec.constraint {
        Constraint::SumToZero => absorb_constraint(&b, &s, &counts, TermKind::Ordinal(spec)),
        Constraint::Reference => {
            let z = reference_transform(spec.k);
            let mut c = DVector::zeros(spec.k);
            c[0] = 1.0;
            let bz = &b * &z;
            let sz = z.tr_mul(&(s * &z));
            let mut block = finish_block(bz, sz, z, c, TermKind::Ordinal(spec));
            // the centering used by inference is always the count-weighted one
            block.constraint_vector = counts;
            Ok(block)
        }
    }
}

/// Unpenalized factor coding with level 1 as reference.
pub fn build_factor_block(levels: &[usize], k: usize) -> Result<DesignBlock> {
    if k < 2 {
        return Err(GamError::Spec(format!("factor needs at least 2 levels, got {k}")));
    }
    let b = build_dummy_basis(levels, k)?;
    let z = reference_transform(k);
    let bz = &b * &z;
    let counts = level_counts(levels, k);
    Ok(finish_block(
        bz,
        DMatrix::zeros(k - 1, k - 1),
        z,
        counts,
        TermKind::Factor { k },
    ))
}

pub fn build_parametric_block(values: &[f64]) -> DesignBlock {
    let b = DMatrix::from_column_slice(values.len(), 1, values);
    finish_block(
        b,
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        TermKind::Parametric,
    )
}

/// B-spline basis on equally spaced knots over a closed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
    intervals: usize,
}

impl BSplineBasis {
    /// `q` basis functions of the given degree over `[lo, hi]`.
    pub fn new(lo: f64, hi: f64, q: usize, degree: usize) -> Self {
        let intervals = q - degree;
        let h = (hi - lo) / intervals as f64;
        let knots = (0..intervals + 2 * degree + 1)
            .map(|i| lo + (i as f64 - degree as f64) * h)
            .collect();
        Self {
            knots,
            degree,
            intervals,
        }
    }

    pub fn num_basis(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn range(&self) -> (f64, f64) {
        (
            self.knots[self.degree],
            self.knots[self.degree + self.intervals],
        )
    }

    /// Nonzero basis values at `x` (clamped into range) and the index of the
    /// first nonzero function.
    fn nonzero_at(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        let (lo, hi) = self.range();
        let x = x.clamp(lo, hi);
        let h = (hi - lo) / self.intervals as f64;
        let span = (((x - lo) / h).floor() as usize).min(self.intervals - 1) + p;
        let t = &self.knots;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            out[j] = saved;
        }
        span - p
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(x.len(), self.num_basis());
        let mut vals = vec![0.0; self.degree + 1];
        for (i, &xi) in x.iter().enumerate() {
            let first = self.nonzero_at(xi, &mut vals);
            for (j, v) in vals.iter().enumerate() {
                b[(i, first + j)] = *v;
            }
        }
        b
    }
}

/// Cubic P-spline block for a continuous covariate; the centering weights
/// are the column sums of the basis so that `Σ_i f(x_i) = 0`.
pub fn build_pspline_block(name: &str, x: &[f64], spec: ContinuousTermSpec) -> Result<DesignBlock> {
    spec.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GamError::DegenerateCovariate(name.to_string()));
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(GamError::DegenerateCovariate(name.to_string()));
    }
    let basis = BSplineBasis::new(lo, hi, spec.q, spec.degree);
    let b = basis.evaluate(x);
    let s = difference_penalty(spec.q, spec.order)?;
    let weights = DVector::from_iterator(spec.q, b.column_iter().map(|c| c.sum()));
    absorb_constraint(&b, &s, &weights, TermKind::Continuous { spec, basis })
}

/// `D̃_m`: the first `m` rows of the identity stacked on `D_m`. Invertible.
pub fn mixed_transform(k: usize, m: usize) -> Result<DMatrix<f64>> {
    let d = build_diff_matrix(k, m)?;
    let mut t = DMatrix::zeros(k, k);
    for i in 0..m {
        t[(i, i)] = 1.0;
    }
    t.view_mut((m, 0), (k - m, k)).copy_from(&d);
    Ok(t)
}

/// Splits `beta` into its unpenalized leading part and the random-effect
/// style differences `u = D_m β`.
pub fn mixed_reparam(beta: &[f64], m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if beta.len() <= m {
        return Err(GamError::PenaltyOrder {
            order: m,
            needed: m + 1,
            got: beta.len(),
        });
    }
    let d = build_diff_matrix(beta.len(), m)?;
    let u = &d * DVector::from_column_slice(beta);
    Ok((beta[..m].to_vec(), u.iter().copied().collect()))
}

/// Inverse of [`mixed_reparam`] by forward recursion.
pub fn mixed_reconstruct(fixed: &[f64], u: &[f64], m: usize) -> Vec<f64> {
    let mut beta = fixed.to_vec();
    for (l, ul) in u.iter().enumerate() {
        let next = match m {
            1 => beta[l] + ul,
            _ => ul + 2.0 * beta[l + 1] - beta[l],
        };
        beta.push(next);
    }
    beta
}
