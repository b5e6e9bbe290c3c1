//! Monte Carlo harness: null calibration of the smooth-term test, size and
//! power against linear and factor baselines, band coverage, and squared
//! estimation error.
//!
//! Every replicate draws from its own ChaCha stream keyed by `(seed,
//! replicate index)`, so results do not depend on the worker count or on
//! scheduling. Different effect sizes reuse the same streams (common random
//! numbers), which keeps power curves smooth in ψ.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{read_csv, Dataset};
use crate::error::{GamError, Result};
use crate::family::Family;
use crate::inference::{credible_band_centered, wald_smooth_test, Centering, IntervalBand};
use crate::model::{ModelSpec, TermSpec};
use crate::smoothness::{optimize_lambda, CriterionKind, SmoothnessFit};

/// Number of ordinal levels in the simulation designs.
pub const LEVELS: usize = 6;
/// Squared errors above this are recorded at the ceiling.
pub const SQ_ERROR_CEILING: f64 = 100.0;
/// A cell fails when this fraction of its fits does not converge.
pub const MAX_NONCONVERGED_FRACTION: f64 = 0.2;
pub const ALPHAS: [f64; 2] = [0.05, 0.1];
pub const BAND_LEVEL: f64 = 0.95;
/// Asymptotic 1% critical value of `√n · D` for the one-sample KS test.
pub const KS_CRIT_1PCT: f64 = 1.6276;

const BUNDLED_BPD: &str = include_str!("../data/bpd_synthetic.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimFamily {
    Gaussian,
    Logit,
}

impl SimFamily {
    pub fn family(&self) -> Family {
        match self {
            SimFamily::Gaussian => Family::Gaussian,
            SimFamily::Logit => Family::Binomial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthShape {
    NearLinear,
    NonMonotone,
}

/// How the continuous covariate enters the fitted models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZForm {
    /// P-spline smooth of `z`.
    #[default]
    Smooth,
    /// Known transform `√z` as a parametric term.
    Sqrt,
}

macro_rules! text_enum {
    ($t:ty { $($v:ident => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($s => Ok(Self::$v),)+
                    other => Err(format!("unknown value '{other}'")),
                }
            }
        }
    };
}

text_enum!(SimFamily { Gaussian => "gaussian", Logit => "logit" });
text_enum!(TruthShape { NearLinear => "near-linear", NonMonotone => "non-monotone" });
text_enum!(ZForm { Smooth => "smooth", Sqrt => "sqrt" });

/// Model used to estimate the ordinal effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Difference-penalized dummy smooth of order `m`, tested by Wald.
    Ordinal(usize),
    /// Class labels as a numeric covariate, z-test on the slope.
    Linear,
    /// Unpenalized dummies, likelihood-ratio test on `k − 1` df.
    Factor,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Ordinal(m) => write!(f, "ordinal-m{m}"),
            Estimator::Linear => f.write_str("linear"),
            Estimator::Factor => f.write_str("factor"),
        }
    }
}

impl FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Estimator::Linear),
            "factor" => Ok(Estimator::Factor),
            _ => s
                .strip_prefix("ordinal-m")
                .and_then(|m| m.parse().ok())
                .map(Estimator::Ordinal)
                .ok_or_else(|| format!("unknown estimator '{s}'")),
        }
    }
}

/// One cell of a simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub family: SimFamily,
    pub shape: TruthShape,
    pub psi: f64,
    pub n: usize,
    pub k: usize,
    pub replicates: usize,
    pub seed: u64,
    pub z_form: ZForm,
}

impl SimScenario {
    pub fn new(family: SimFamily, shape: TruthShape, psi: f64) -> Self {
        Self {
            family,
            shape,
            psi,
            n: 100,
            k: LEVELS,
            replicates: 1000,
            seed: 1,
            z_form: ZForm::Smooth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return Err(GamError::Spec(format!("effect size must be ≥ 0, got {}", self.psi)));
        }
        if self.n < 20 {
            return Err(GamError::Spec(format!("n must be at least 20, got {}", self.n)));
        }
        if self.replicates == 0 {
            return Err(GamError::Spec("at least one replicate is needed".into()));
        }
        if self.k != LEVELS {
            return Err(GamError::Spec(format!("the truth functions are defined for k = {LEVELS}")));
        }
        Ok(())
    }

    pub fn with_psi(mut self, psi: f64) -> Self {
        self.psi = psi;
        self
    }
}

/// Centered truth `f` on the six levels, unit range before scaling by ψ.
pub fn truth_function(shape: TruthShape) -> Vec<f64> {
    let raw: [f64; LEVELS] = match shape {
        TruthShape::NearLinear => [0.0, 0.2, 0.45, 0.6, 0.85, 1.0],
        TruthShape::NonMonotone => [0.0, 1.0, 0.3, 0.9, 0.1, 0.6],
    };
    let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let mean = raw.iter().sum::<f64>() / LEVELS as f64;
    raw.iter().map(|v| (v - mean) / (hi - lo)).collect()
}

fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws replicate `index`: columns `y`, `z`, `x`.
pub fn generate_replicate(scenario: &SimScenario, index: usize) -> Dataset {
    let mut rng = replicate_rng(scenario.seed, index);
    let f = truth_function(scenario.shape);
    let n = scenario.n;
    let (mut y, mut z, mut x) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let zi: f64 = rng.random();
        let xi: usize = rng.random_range(1..=scenario.k);
        let effect = scenario.psi * f[xi - 1];
        let yi = match scenario.family {
            SimFamily::Gaussian => 3.0 * zi.sqrt() + effect + rng.sample::<f64, _>(StandardNormal),
            SimFamily::Logit => {
                let eta = -2.0 + 4.0 * zi.sqrt() + effect;
                let p = 1.0 / (1.0 + (-eta).exp());
                f64::from(u8::from(rng.random::<f64>() < p))
            }
        };
        y.push(yi);
        z.push(zi);
        x.push(xi as f64);
    }
    Dataset::new().with_column("y", y).with_column("z", z).with_column("x", x)
}

fn covariate_terms(z_form: ZForm) -> Vec<TermSpec> {
    match z_form {
        ZForm::Smooth => vec![TermSpec::smooth("z")],
        ZForm::Sqrt => vec![TermSpec::parametric("sqrt_z")],
    }
}

fn with_sqrt_z(data: &Dataset, z_form: ZForm) -> Dataset {
    match (z_form, data.column("z")) {
        (ZForm::Sqrt, Some(z)) => {
            let s = z.iter().map(|v| v.sqrt()).collect();
            data.clone().with_column("sqrt_z", s)
        }
        _ => data.clone(),
    }
}

fn fit_spec(spec: &ModelSpec, data: &Dataset) -> Result<(crate::fitter::PenalizedProblem, SmoothnessFit)> {
    let problem = spec.build(data)?;
    let sf = optimize_lambda(&problem, CriterionKind::Reml)?;
    Ok((problem, sf))
}

fn center(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// What one estimator produced on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorFit {
    pub p_value: f64,
    /// Estimated effect at each level, centered to mean zero.
    pub f_hat: Vec<f64>,
    /// Pointwise band for the same centered effect (smooth estimators).
    pub band: Option<IntervalBand>,
    pub edf: Option<f64>,
    pub converged: bool,
    pub at_boundary: bool,
    /// Factor fit with a constant-response level or a diverging fit.
    pub separated: bool,
}

/// Fits `est` to `y ~ covariates + x` on `data` (columns `y`, `z`, `x`
/// plus whatever `extra` terms name).
pub fn fit_estimator(
    data: &Dataset,
    family: Family,
    covariates: &[TermSpec],
    k: usize,
    est: Estimator,
) -> Result<EstimatorFit> {
    let with = |t: TermSpec| {
        let mut terms = covariates.to_vec();
        terms.push(t);
        ModelSpec::new("y", family, terms)
    };
    match est {
        Estimator::Ordinal(m) => {
            let (p, sf) = fit_spec(&with(TermSpec::ordinal("x", k, m)), data)?;
            let t = p.term_index("s(x)").expect("ordinal term present");
            let test = wald_smooth_test(&p, &sf.fit, t)?;
            let band = credible_band_centered(&p, &sf.fit, t, BAND_LEVEL, Centering::Unweighted)?;
            Ok(EstimatorFit {
                p_value: test.p_value,
                f_hat: band.center.clone(),
                band: Some(band),
                edf: Some(test.edf),
                converged: sf.fit.converged,
                at_boundary: sf.hit_boundary(),
                separated: false,
            })
        }
        Estimator::Linear => {
            let (p, sf) = fit_spec(&with(TermSpec::parametric("x")), data)?;
            let col = p.terms[p.term_index("x").expect("linear term present")].cols.start;
            let b = sf.fit.beta[col];
            let se = sf.fit.vcov[(col, col)].max(0.0).sqrt();
            let mid = (k as f64 + 1.0) / 2.0;
            Ok(EstimatorFit {
                p_value: statrs::function::erf::erfc((b / se).abs() / std::f64::consts::SQRT_2),
                f_hat: (1..=k).map(|l| b * (l as f64 - mid)).collect(),
                band: None,
                edf: None,
                converged: sf.fit.converged,
                at_boundary: sf.hit_boundary(),
                separated: false,
            })
        }
        Estimator::Factor => {
            let (p1, sf1) = fit_spec(&with(TermSpec::factor("x", k)), data)?;
            let (_, sf0) = fit_spec(&ModelSpec::new("y", family, covariates.to_vec()), data)?;
            let n = p1.nobs() as f64;
            let stat = match family {
                Family::Gaussian => n * (sf0.fit.deviance / sf1.fit.deviance).ln(),
                Family::Binomial => (sf0.fit.deviance - sf1.fit.deviance).max(0.0),
            };
            let p_value = ChiSquared::new((k - 1) as f64)
                .map(|c| c.sf(stat))
                .map_err(|e| GamError::Simulation(e.to_string()))?;
            let t = p1.term_index("factor(x)").expect("factor term present");
            let mut levels = vec![0.0];
            levels.extend(sf1.fit.term_coefs(&p1, t).iter());
            let separated = family == Family::Binomial
                && (constant_level(data, k) || !sf1.fit.converged || sf1.fit.mu.iter().any(|&m| m <= 1e-8 || m >= 1.0 - 1e-8));
            Ok(EstimatorFit {
                p_value,
                f_hat: center(&levels),
                band: None,
                edf: None,
                converged: sf1.fit.converged && sf0.fit.converged,
                at_boundary: sf1.hit_boundary() || sf0.hit_boundary(),
                separated,
            })
        }
    }
}

/// Some level of `x` has an all-0 or all-1 response.
fn constant_level(data: &Dataset, k: usize) -> bool {
    let (Some(y), Some(x)) = (data.column("y"), data.column("x")) else {
        return false;
    };
    let mut seen = vec![(0usize, 0usize); k];
    for (&yi, &xi) in y.iter().zip(x) {
        let l = xi as usize - 1;
        seen[l].0 += 1;
        seen[l].1 += usize::from(yi == 1.0);
    }
    seen.iter().any(|&(n, ones)| n > 0 && (ones == 0 || ones == n))
}

/// One row of the per-replicate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub study: String,
    pub family: String,
    pub shape: String,
    pub psi: f64,
    pub estimator: String,
    pub replicate: usize,
    pub converged: bool,
    pub separated: bool,
    pub at_boundary: bool,
    pub edf: Option<f64>,
    pub p_value: Option<f64>,
    pub sq_error: Option<f64>,
    pub cover_1: Option<u8>,
    pub cover_2: Option<u8>,
    pub cover_3: Option<u8>,
    pub cover_4: Option<u8>,
    pub cover_5: Option<u8>,
    pub cover_6: Option<u8>,
}

impl ReplicateRecord {
    pub fn coverage(&self) -> Option<[bool; LEVELS]> {
        let c = [self.cover_1, self.cover_2, self.cover_3, self.cover_4, self.cover_5, self.cover_6];
        if c.iter().all(Option::is_some) {
            Some(c.map(|v| v == Some(1)))
        } else {
            None
        }
    }

    fn set_coverage(&mut self, covered: &[bool]) {
        let v: Vec<Option<u8>> = covered.iter().map(|&c| Some(u8::from(c))).collect();
        [
            self.cover_1,
            self.cover_2,
            self.cover_3,
            self.cover_4,
            self.cover_5,
            self.cover_6,
        ] = [v[0], v[1], v[2], v[3], v[4], v[5]];
    }
}

/// One row of the plot-ready aggregates CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub family: String,
    pub shape: String,
    pub psi: f64,
    pub estimator: String,
    pub metric: String,
    pub key: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub study: String,
    pub seed: u64,
    pub replicates: usize,
    pub scenarios: Vec<SimScenario>,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
    #[serde(skip)]
    pub aggregates: Vec<AggregateRow>,
    /// Fits dropped because they failed or did not converge.
    pub nonconverged: usize,
    pub wall_time_secs: f64,
}

impl SimReport {
    /// Concatenates reports of the same study, e.g. one per family and shape.
    pub fn combine(reports: Vec<SimReport>) -> Result<SimReport> {
        let mut iter = reports.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| GamError::Simulation("nothing to combine".into()))?;
        for r in iter {
            if r.study != out.study || r.seed != out.seed {
                return Err(GamError::Simulation("cannot combine different studies or seeds".into()));
            }
            out.scenarios.extend(r.scenarios);
            out.records.extend(r.records);
            out.aggregates.extend(r.aggregates);
            out.nonconverged += r.nonconverged;
            out.wall_time_secs += r.wall_time_secs;
        }
        Ok(out)
    }

    /// Records of one estimator in one cell.
    pub fn cell(&self, family: &str, shape: &str, psi: f64, estimator: Estimator) -> Vec<&ReplicateRecord> {
        let est = estimator.to_string();
        self.records
            .iter()
            .filter(|r| r.family == family && r.shape == shape && r.psi == psi && r.estimator == est)
            .collect()
    }

    pub fn aggregate(&self, family: &str, shape: &str, psi: f64, estimator: Estimator, metric: &str, key: f64) -> Option<f64> {
        let est = estimator.to_string();
        self.aggregates
            .iter()
            .find(|a| {
                a.family == family
                    && a.shape == shape
                    && a.psi == psi
                    && a.estimator == est
                    && a.metric == metric
                    && a.key == key
            })
            .map(|a| a.value)
    }

    pub fn write_records<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_rows(&self.records, w)
    }

    pub fn write_aggregates<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_rows(&self.aggregates, w)
    }

    /// JSON manifest: study, scenarios, seed, version, wall time.
    pub fn manifest(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["version"] = env!("CARGO_PKG_VERSION").into();
        v["records_file"] = "replicates.csv".into();
        v["aggregates_file"] = "aggregates.csv".into();
        v
    }

    /// Writes `replicates.csv`, `aggregates.csv`, and `manifest.json`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_records(std::fs::File::create(dir.join("replicates.csv"))?)?;
        self.write_aggregates(std::fs::File::create(dir.join("aggregates.csv"))?)?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
        Ok(())
    }
}

fn write_rows<T: Serialize, W: std::io::Write>(rows: &[T], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

fn parallel_map<T, F>(workers: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| GamError::Simulation(e.to_string()))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Kolmogorov–Smirnov distance of a sample from U(0, 1).
pub fn ks_uniform(p: &[f64]) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Empirical CDF of `p` at `x`.
pub fn ecdf(p: &[f64], x: f64) -> f64 {
    p.iter().filter(|&&v| v <= x).count() as f64 / p.len() as f64
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // type-7 (linear interpolation) sample quantile
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn base_record(study: &str, sc: &SimScenario, est: Estimator, replicate: usize) -> ReplicateRecord {
    ReplicateRecord {
        study: study.into(),
        family: sc.family.to_string(),
        shape: sc.shape.to_string(),
        psi: sc.psi,
        estimator: est.to_string(),
        replicate,
        converged: false,
        separated: false,
        at_boundary: false,
        edf: None,
        p_value: None,
        sq_error: None,
        cover_1: None,
        cover_2: None,
        cover_3: None,
        cover_4: None,
        cover_5: None,
        cover_6: None,
    }
}

/// Runs every estimator on one replicate; `None` marks a dropped fit.
fn replicate_records(
    study: &str,
    sc: &SimScenario,
    estimators: &[Estimator],
    index: usize,
) -> Vec<(Estimator, Option<ReplicateRecord>)> {
    let data = with_sqrt_z(&generate_replicate(sc, index), sc.z_form);
    let truth: Vec<f64> = truth_function(sc.shape).iter().map(|f| sc.psi * f).collect();
    let covariates = covariate_terms(sc.z_form);
    estimators
        .iter()
        .map(|&est| {
            let rec = fit_estimator(&data, sc.family.family(), &covariates, sc.k, est)
                .ok()
                .filter(|f| f.converged || est == Estimator::Factor)
                .map(|f| {
                    let mut r = base_record(study, sc, est, index);
                    r.converged = f.converged;
                    r.separated = f.separated;
                    r.at_boundary = f.at_boundary;
                    r.edf = f.edf;
                    r.p_value = Some(f.p_value);
                    let se: f64 = f.f_hat.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum();
                    r.sq_error = Some(if se.is_finite() { se.min(SQ_ERROR_CEILING) } else { SQ_ERROR_CEILING });
                    if let Some(band) = &f.band {
                        r.set_coverage(&band.covers(&truth));
                    }
                    r
                });
            (est, rec)
        })
        .collect()
}

struct Collected {
    records: Vec<ReplicateRecord>,
    nonconverged: usize,
}

/// Flattens per-replicate results and enforces the non-convergence limit
/// per estimator and cell.
fn collect(
    cells: &[SimScenario],
    estimators: &[Estimator],
    results: Vec<Vec<(Estimator, Option<ReplicateRecord>)>>,
    replicates: usize,
) -> Result<Collected> {
    let mut failures = vec![0usize; cells.len() * estimators.len()];
    let mut records = Vec::new();
    for (i, reps) in results.into_iter().enumerate() {
        let cell = i / replicates;
        for (j, (_, rec)) in reps.into_iter().enumerate() {
            match rec {
                Some(r) => records.push(r),
                None => failures[cell * estimators.len() + j] += 1,
            }
        }
    }
    for (idx, &f) in failures.iter().enumerate() {
        if f as f64 >= MAX_NONCONVERGED_FRACTION * replicates as f64 {
            let sc = &cells[idx / estimators.len()];
            return Err(GamError::Simulation(format!(
                "{} of {replicates} {} fits failed in cell {}/{}/ψ={}",
                f,
                estimators[idx % estimators.len()],
                sc.family,
                sc.shape,
                sc.psi
            )));
        }
    }
    Ok(Collected {
        records,
        nonconverged: failures.iter().sum(),
    })
}

fn agg(sc: &SimScenario, est: Estimator, metric: &str, key: f64, value: f64) -> AggregateRow {
    AggregateRow {
        family: sc.family.to_string(),
        shape: sc.shape.to_string(),
        psi: sc.psi,
        estimator: est.to_string(),
        metric: metric.into(),
        key,
        value,
    }
}

fn cell_records<'a>(records: &'a [ReplicateRecord], sc: &SimScenario, est: Estimator) -> Vec<&'a ReplicateRecord> {
    let (family, shape, e) = (sc.family.to_string(), sc.shape.to_string(), est.to_string());
    records
        .iter()
        .filter(|r| r.family == family && r.shape == shape && r.psi == sc.psi && r.estimator == e)
        .collect()
}

/// Rejection rates at each α for every (ψ, estimator) cell.
pub fn run_size_power(base: &SimScenario, psis: &[f64], estimators: &[Estimator], workers: usize) -> Result<SimReport> {
    let start = Instant::now();
    if psis.is_empty() {
        return Err(GamError::Spec("at least one effect size is needed".into()));
    }
    let cells: Vec<SimScenario> = psis.iter().map(|&p| base.with_psi(p)).collect();
    for c in &cells {
        c.validate()?;
    }
    let r = base.replicates;
    let results = parallel_map(workers, cells.len() * r, |i| {
        replicate_records("size-power", &cells[i / r], estimators, i % r)
    })?;
    let collected = collect(&cells, estimators, results, r)?;
    let mut aggregates = Vec::new();
    for sc in &cells {
        for &est in estimators {
            let recs = cell_records(&collected.records, sc, est);
            let p: Vec<f64> = recs.iter().filter_map(|r| r.p_value).collect();
            aggregates.push(agg(sc, est, "fits", 0.0, p.len() as f64));
            for a in ALPHAS {
                aggregates.push(agg(sc, est, "rejection", a, p.iter().filter(|&&v| v < a).count() as f64 / p.len() as f64));
            }
        }
    }
    Ok(SimReport {
        study: "size-power".into(),
        seed: base.seed,
        replicates: r,
        scenarios: cells,
        records: collected.records,
        aggregates,
        nonconverged: collected.nonconverged,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Coverage of pointwise bands and squared estimation error for each
/// estimator at a fixed effect size.
pub fn run_accuracy(study: &str, sc: &SimScenario, estimators: &[Estimator], workers: usize) -> Result<SimReport> {
    let start = Instant::now();
    sc.validate()?;
    if sc.psi <= 0.0 {
        return Err(GamError::Spec("coverage and accuracy need ψ > 0".into()));
    }
    let cells = [*sc];
    let r = sc.replicates;
    let results = parallel_map(workers, r, |i| replicate_records(study, sc, estimators, i))?;
    let collected = collect(&cells, estimators, results, r)?;
    let mut aggregates = Vec::new();
    for &est in estimators {
        let recs = cell_records(&collected.records, sc, est);
        aggregates.push(agg(sc, est, "fits", 0.0, recs.len() as f64));
        let covers: Vec<[bool; LEVELS]> = recs.iter().filter_map(|r| r.coverage()).collect();
        if !covers.is_empty() {
            let mut total = 0.0;
            for l in 0..LEVELS {
                let c = covers.iter().filter(|c| c[l]).count() as f64 / covers.len() as f64;
                total += c;
                aggregates.push(agg(sc, est, "coverage", (l + 1) as f64, c));
            }
            aggregates.push(agg(sc, est, "coverage_mean", 0.0, total / LEVELS as f64));
        }
        let mut se: Vec<f64> = recs.iter().filter_map(|r| r.sq_error).collect();
        if !se.is_empty() {
            se.sort_by(f64::total_cmp);
            for q in [0.25, 0.5, 0.75] {
                aggregates.push(agg(sc, est, "sq_error_quantile", q, quantile(&se, q)));
            }
            aggregates.push(agg(sc, est, "sq_error_mean", 0.0, se.iter().sum::<f64>() / se.len() as f64));
            aggregates.push(agg(sc, est, "sq_error_capped", SQ_ERROR_CEILING, se.iter().filter(|&&v| v >= SQ_ERROR_CEILING).count() as f64));
        }
        aggregates.push(agg(sc, est, "separated", 0.0, recs.iter().filter(|r| r.separated).count() as f64));
    }
    Ok(SimReport {
        study: study.into(),
        seed: sc.seed,
        replicates: r,
        scenarios: cells.to_vec(),
        records: collected.records,
        aggregates,
        nonconverged: collected.nonconverged,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Band coverage for the first- and second-order penalties.
pub fn run_coverage(sc: &SimScenario, workers: usize) -> Result<SimReport> {
    run_accuracy("coverage", sc, &[Estimator::Ordinal(1), Estimator::Ordinal(2)], workers)
}

/// Squared error of both penalties and the linear and factor baselines.
pub fn run_mse(sc: &SimScenario, workers: usize) -> Result<SimReport> {
    run_accuracy(
        "mse",
        sc,
        &[Estimator::Ordinal(1), Estimator::Ordinal(2), Estimator::Linear, Estimator::Factor],
        workers,
    )
}

/// Parametric-bootstrap check of the smooth-term test under a true null.
#[derive(Debug, Clone)]
pub struct NullCalibration {
    pub data: Dataset,
    /// Binomial confounder model without the ordinal covariate.
    pub base: ModelSpec,
    pub x_column: String,
    pub k: usize,
    pub m_values: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
}

/// Synthetic stand-in for a neonatal cohort: binary outcome `y`, birth
/// `weight` (g), indicators `sga`, `sex`, `mult`, days of `steroid` and
/// `anti`biotics, and the week `x` ∈ 1..=6 of first bacterial detection.
pub fn bundled_confounder_data() -> Dataset {
    let columns: Vec<String> = ["y", "weight", "sga", "sex", "mult", "steroid", "anti", "x"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    read_csv(BUNDLED_BPD.as_bytes(), &columns)
        .expect("bundled dataset parses")
        .0
}

/// Confounder model used with the bundled data.
pub fn bundled_confounder_model() -> ModelSpec {
    ModelSpec::new(
        "y",
        Family::Binomial,
        vec![
            TermSpec::smooth("weight"),
            TermSpec::parametric("sga"),
            TermSpec::parametric("sex"),
            TermSpec::parametric("mult"),
            TermSpec::parametric("steroid"),
            TermSpec::parametric("anti"),
        ],
    )
}

impl NullCalibration {
    pub fn bundled(replicates: usize, seed: u64, m_values: Vec<usize>) -> Self {
        Self {
            data: bundled_confounder_data(),
            base: bundled_confounder_model(),
            x_column: "x".into(),
            k: LEVELS,
            m_values,
            replicates,
            seed,
        }
    }
}

/// Simulates responses from the fitted confounder model, refits with
/// `s(x, m)` added, and records the p-value of the `x` term.
pub fn run_null_calibration(cfg: &NullCalibration, workers: usize) -> Result<SimReport> {
    let start = Instant::now();
    if cfg.replicates == 0 || cfg.m_values.is_empty() {
        return Err(GamError::Spec("need at least one replicate and one penalty order".into()));
    }
    if cfg.base.family != Family::Binomial {
        return Err(GamError::Spec("null calibration expects a binomial confounder model".into()));
    }
    let (_, base_fit) = fit_spec(&cfg.base, &cfg.data)?;
    if !base_fit.fit.converged {
        return Err(GamError::Simulation("confounder model did not converge".into()));
    }
    let mu: Vec<f64> = base_fit.fit.mu.iter().copied().collect();
    let estimators: Vec<Estimator> = cfg.m_values.iter().map(|&m| Estimator::Ordinal(m)).collect();
    let scenario = SimScenario {
        family: SimFamily::Logit,
        shape: TruthShape::NearLinear,
        psi: 0.0,
        n: cfg.data.nrows(),
        k: cfg.k,
        replicates: cfg.replicates,
        seed: cfg.seed,
        z_form: ZForm::Smooth,
    };
    let results = parallel_map(workers, cfg.replicates, |i| {
        let mut rng = replicate_rng(cfg.seed, i);
        let y: Vec<f64> = mu.iter().map(|&p| f64::from(u8::from(rng.random::<f64>() < p))).collect();
        let mut data = cfg.data.clone();
        data.insert(cfg.base.response.clone(), y);
        estimators
            .iter()
            .map(|&est| {
                let Estimator::Ordinal(m) = est else { unreachable!() };
                let mut terms = cfg.base.terms.clone();
                terms.push(TermSpec::ordinal(&cfg.x_column, cfg.k, m));
                let spec = ModelSpec::new(&cfg.base.response, Family::Binomial, terms);
                let label = format!("s({})", cfg.x_column);
                let rec = fit_spec(&spec, &data).ok().and_then(|(p, sf)| {
                    let t = p.term_index(&label)?;
                    let test = wald_smooth_test(&p, &sf.fit, t).ok()?;
                    sf.fit.converged.then(|| {
                        let mut r = base_record("null-calibration", &scenario, est, i);
                        r.family = "logit".into();
                        r.shape = "confounder".into();
                        r.converged = true;
                        r.at_boundary = sf.hit_boundary();
                        r.edf = Some(test.edf);
                        r.p_value = Some(test.p_value);
                        r
                    })
                });
                (est, rec)
            })
            .collect::<Vec<_>>()
    })?;
    let collected = collect(&[scenario], &estimators, results, cfg.replicates)?;
    let mut aggregates = Vec::new();
    for &est in &estimators {
        let mut p: Vec<f64> = collected
            .records
            .iter()
            .filter(|r| r.estimator == est.to_string())
            .filter_map(|r| r.p_value)
            .collect();
        p.sort_by(f64::total_cmp);
        let n = p.len() as f64;
        let row = |metric: &str, key: f64, value: f64| AggregateRow {
            family: "logit".into(),
            shape: "confounder".into(),
            psi: 0.0,
            estimator: est.to_string(),
            metric: metric.into(),
            key,
            value,
        };
        aggregates.push(row("fits", 0.0, n));
        aggregates.push(row("ks_distance", 0.0, ks_uniform(&p)));
        aggregates.push(row("ks_critical_1pct", 0.0, KS_CRIT_1PCT / n.sqrt()));
        for a in ALPHAS {
            aggregates.push(row("ecdf", a, ecdf(&p, a)));
        }
        for (i, &v) in p.iter().enumerate() {
            if v > 0.1 {
                break;
            }
            aggregates.push(row("qq", (i as f64 + 1.0) / (n + 1.0), v));
        }
    }
    Ok(SimReport {
        study: "null-calibration".into(),
        seed: cfg.seed,
        replicates: cfg.replicates,
        scenarios: vec![scenario],
        records: collected.records,
        aggregates,
        nonconverged: collected.nonconverged,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
