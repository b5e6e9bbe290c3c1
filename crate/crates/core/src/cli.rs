//! Command-line front end: `fit` for a single model described by a JSON
//! config, `simulate` for the Monte Carlo studies.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{read_csv, Dataset};
use crate::error::GamError;
use crate::family::Family;
use crate::fitter::pirls_fit;
use crate::inference::{credible_band, summarize, wald_smooth_test, SummaryContext, SummaryReport};
use crate::model::{ModelSpec, TermRole};
use crate::simulate::{
    bundled_confounder_data, bundled_confounder_model, run_coverage, run_mse, run_null_calibration,
    run_size_power, Estimator, NullCalibration, SimFamily, SimReport, SimScenario, TruthShape, ZForm, LEVELS,
};
use crate::smoothness::{criterion_at_fit, optimize_lambda, CriterionKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("row {row}, column '{column}': level {value} is outside 1..={k}")]
    Level {
        row: usize,
        column: String,
        value: f64,
        k: usize,
    },

    #[error("row {row}, column '{column}': {value} is not a valid {family} response")]
    Response {
        row: usize,
        column: String,
        family: &'static str,
        value: f64,
    },

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Gam(#[from] GamError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn default_level() -> f64 {
    0.95
}

/// Model description read from the `--config` JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub model: ModelSpec,
    #[serde(default)]
    pub criterion: CriterionKind,
    #[serde(default = "default_level")]
    pub interval_level: f64,
}

impl ModelConfig {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ModelConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return Err(CliError::Usage(format!(
                "interval_level must lie in (0, 1), got {}",
                self.interval_level
            )));
        }
        Ok(())
    }

    fn columns(&self) -> Vec<String> {
        let mut cols = vec![self.model.response.clone()];
        for t in &self.model.terms {
            if !cols.contains(&t.column) {
                cols.push(t.column.clone());
            }
        }
        cols
    }
}

/// Dataset plus the 1-based CSV data-row number of every kept row.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: Dataset,
    pub source_rows: Vec<usize>,
}

/// Reads the columns used by `config` and checks ordinal levels and the
/// response against the declared family. Errors name the CSV data row.
pub fn load_csv(path: &Path, config: &ModelConfig) -> CliResult<LoadedData> {
    let file = File::open(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let (data, source_rows) = read_csv(file, &config.columns())?;
    let y = data
        .column(&config.model.response)
        .ok_or_else(|| GamError::UnknownColumn(config.model.response.clone()))?;
    for (i, &v) in y.iter().enumerate() {
        let ok = match config.model.family {
            Family::Gaussian => v.is_finite(),
            Family::Binomial => v == 0.0 || v == 1.0,
        };
        if !ok {
            return Err(CliError::Response {
                row: source_rows[i],
                column: config.model.response.clone(),
                family: config.model.family.name(),
                value: v,
            });
        }
    }
    for t in &config.model.terms {
        let k = match t.role {
            TermRole::Ordinal { k, .. } | TermRole::Factor { k } => k,
            _ => continue,
        };
        let x = data.column(&t.column).ok_or_else(|| GamError::UnknownColumn(t.column.clone()))?;
        if let Some(i) = x.iter().position(|&v| !(v.fract() == 0.0 && v >= 1.0 && v <= k as f64)) {
            return Err(CliError::Level {
                row: source_rows[i],
                column: t.column.clone(),
                value: x[i],
                k,
            });
        }
    }
    Ok(LoadedData { data, source_rows })
}

/// What `cmd_fit` produced.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub report: SummaryReport,
    pub converged: bool,
    /// Fit-quality problems; any entry makes the process exit with 2.
    pub warnings: Vec<String>,
}

fn fit_warnings(problem: &crate::fitter::PenalizedProblem, fit: &crate::fitter::FittedGam) -> Vec<String> {
    let mut w = Vec::new();
    if !fit.converged {
        w.push(format!("PIRLS did not converge in {} iterations", fit.iterations));
    }
    if problem.family == Family::Binomial && fit.mu.iter().any(|&m| m <= 1e-8 || m >= 1.0 - 1e-8) {
        w.push("fitted probabilities numerically 0 or 1 occurred".into());
    }
    if fit.ridge_rescued {
        w.push("penalized Hessian needed a ridge to be factorized".into());
    }
    w
}

/// Fits the configured model and writes `summary.txt`, `summary.json`,
/// `intervals.csv`, and `fitted.csv` into `out`.
pub fn cmd_fit(
    config: &ModelConfig,
    data_path: &Path,
    out: &Path,
    lambda: Option<&[f64]>,
    criterion: Option<CriterionKind>,
) -> CliResult<FitOutcome> {
    let loaded = load_csv(data_path, config)?;
    let kind = criterion.unwrap_or(config.criterion);
    let problem = config.model.build(&loaded.data)?;
    let n_smooth = problem.smooth_terms().len();

    let (fit, criterion_value, at_boundary) = match lambda {
        Some(l) => {
            if l.len() != n_smooth {
                return Err(GamError::LambdaCount {
                    expected: n_smooth,
                    got: l.len(),
                }
                .into());
            }
            let fit = pirls_fit(&problem, l)?;
            let value = (n_smooth > 0).then(|| criterion_at_fit(&problem, &fit, kind).0);
            (fit, value, false)
        }
        None if n_smooth == 0 => (pirls_fit(&problem, &[])?, None, false),
        None => {
            let sf = optimize_lambda(&problem, kind)?;
            let b = sf.hit_boundary();
            (sf.fit, Some(sf.value), b)
        }
    };

    let smooth = problem.smooth_terms();
    let tests = smooth
        .iter()
        .map(|&t| wald_smooth_test(&problem, &fit, t))
        .collect::<Result<Vec<_>, _>>()?;
    let ctx = SummaryContext {
        spec: &config.model,
        criterion: kind,
        criterion_value,
        lambda_at_boundary: at_boundary,
    };
    let report = summarize(&problem, &fit, &tests, &ctx);

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("summary.txt"), report.to_text())?;
    std::fs::write(out.join("summary.json"), report.to_json() + "\n")?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("intervals.csv"))?));
    w.write_record(["term", "point", "estimate", "lower", "upper", "level"])
        .map_err(GamError::from)?;
    for &t in smooth {
        let band = credible_band(&problem, &fit, t, config.interval_level)?;
        let (lo, hi) = (band.lower(), band.upper());
        for i in 0..band.points.len() {
            w.write_record([
                band.term.clone(),
                band.points[i].to_string(),
                band.center[i].to_string(),
                lo[i].to_string(),
                hi[i].to_string(),
                band.level.to_string(),
            ])
            .map_err(GamError::from)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("fitted.csv"))?));
    w.write_record(["row", "eta", "mu"]).map_err(GamError::from)?;
    for (i, &row) in loaded.source_rows.iter().enumerate() {
        w.write_record([row.to_string(), fit.eta[i].to_string(), fit.mu[i].to_string()])
            .map_err(GamError::from)?;
    }
    w.flush()?;

    Ok(FitOutcome {
        converged: fit.converged,
        warnings: fit_warnings(&problem, &fit),
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    NullCalibration,
    SizePower,
    Coverage,
    Mse,
}

impl Study {
    fn default_replicates(self) -> usize {
        match self {
            Study::SizePower => 2000,
            _ => 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Reml,
    Ml,
}

impl From<CriterionArg> for CriterionKind {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Reml => CriterionKind::Reml,
            CriterionArg::Ml => CriterionKind::Ml,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ordgam", version, about = "GAMs with difference-penalized ordinal predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model and write its summary, bands, and fitted values.
    Fit(FitArgs),
    /// Run one of the Monte Carlo studies.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fixed smoothing parameters, one per smooth term, comma separated.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    criterion: Option<CriterionArg>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    study: Study,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, env = "ORDGAM_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Response family; all families when omitted.
    #[arg(long)]
    family: Option<SimFamily>,
    /// Truth shape; all shapes when omitted.
    #[arg(long)]
    shape: Option<TruthShape>,
    /// Effect sizes (size-power) or the single effect size (coverage, mse).
    #[arg(long, value_delimiter = ',')]
    psi: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Penalty orders for null-calibration.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    m: Vec<usize>,
    #[arg(long, default_value_t = ZForm::Smooth)]
    z_form: ZForm,
    /// Confounder data for null-calibration (default: bundled synthetic set).
    #[arg(long, requires = "config")]
    data: Option<PathBuf>,
    /// Confounder model config for null-calibration.
    #[arg(long, requires = "data")]
    config: Option<PathBuf>,
    /// Ordinal column tested in null-calibration.
    #[arg(long, default_value = "x")]
    x_column: String,
    #[arg(long, default_value_t = LEVELS)]
    k: usize,
}

/// Default effect-size grid; the logit grid is twice the Gaussian one.
pub fn default_psi_grid(family: SimFamily) -> Vec<f64> {
    let base = [0.0, 0.25, 0.5, 0.75, 1.0];
    let scale = match family {
        SimFamily::Gaussian => 1.0,
        SimFamily::Logit => 2.0,
    };
    base.iter().map(|p| p * scale).collect()
}

/// Effect size used by the coverage and accuracy studies.
pub fn default_accuracy_psi(family: SimFamily) -> f64 {
    match family {
        SimFamily::Gaussian => 0.8,
        SimFamily::Logit => 1.6,
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn cmd_simulate(
    study: Study,
    seed: u64,
    replicates: Option<usize>,
    workers: usize,
    out: &Path,
    opts: &SimOptions,
) -> CliResult<SimReport> {
    let replicates = replicates.unwrap_or(study.default_replicates());
    let report = match study {
        Study::NullCalibration => {
            let (data, base) = match (&opts.data, &opts.config) {
                (Some(d), Some(c)) => {
                    let mut cfg = ModelConfig::from_path(c)?;
                    // the tested column must be loaded alongside the confounders
                    cfg.model.terms.push(crate::model::TermSpec::ordinal(&opts.x_column, opts.k, 2));
                    let loaded = load_csv(d, &cfg)?;
                    cfg.model.terms.pop();
                    (loaded.data, cfg.model)
                }
                _ => (bundled_confounder_data(), bundled_confounder_model()),
            };
            let cfg = NullCalibration {
                data,
                base,
                x_column: opts.x_column.clone(),
                k: opts.k,
                m_values: opts.m.clone(),
                replicates,
                seed,
            };
            run_null_calibration(&cfg, workers)?
        }
        _ => {
            let families = opts.family.map_or(vec![SimFamily::Gaussian, SimFamily::Logit], |f| vec![f]);
            let shapes = opts
                .shape
                .map_or(vec![TruthShape::NearLinear, TruthShape::NonMonotone], |s| vec![s]);
            let mut parts = Vec::new();
            for &family in &families {
                for &shape in &shapes {
                    let mut sc = SimScenario::new(family, shape, 0.0);
                    sc.n = opts.n;
                    sc.replicates = replicates;
                    sc.seed = seed;
                    sc.z_form = opts.z_form;
                    parts.push(match study {
                        Study::SizePower => {
                            let psis = opts.psi.clone().unwrap_or_else(|| default_psi_grid(family));
                            let est = [Estimator::Ordinal(2), Estimator::Linear, Estimator::Factor];
                            run_size_power(&sc, &psis, &est, workers)?
                        }
                        _ => {
                            let psi = match opts.psi.as_deref() {
                                None => default_accuracy_psi(family),
                                Some([p]) => *p,
                                Some(_) => {
                                    return Err(CliError::Usage("coverage and mse take a single --psi".into()))
                                }
                            };
                            let sc = sc.with_psi(psi);
                            if study == Study::Coverage {
                                run_coverage(&sc, workers)?
                            } else {
                                run_mse(&sc, workers)?
                            }
                        }
                    });
                }
            }
            SimReport::combine(parts)?
        }
    };
    report.write_to_dir(out)?;
    Ok(report)
}

/// Scenario flags shared by the simulation studies.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub family: Option<SimFamily>,
    pub shape: Option<TruthShape>,
    pub psi: Option<Vec<f64>>,
    pub n: usize,
    pub m: Vec<usize>,
    pub z_form: ZForm,
    pub data: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub x_column: String,
    pub k: usize,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut impl Write, stderr: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{e}")
            } else {
                write!(stdout, "{e}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit(a) => ModelConfig::from_path(&a.config).and_then(|cfg| {
            cmd_fit(&cfg, &a.data, &a.out, a.lambda.as_deref(), a.criterion.map(Into::into)).map(|o| {
                let _ = write!(stdout, "{}", o.report.to_text());
                for w in &o.warnings {
                    let _ = writeln!(stderr, "warning: {w}");
                }
                if o.warnings.is_empty() {
                    EXIT_OK
                } else {
                    EXIT_NOT_CONVERGED
                }
            })
        }),
        Command::Simulate(a) => {
            let opts = SimOptions {
                family: a.family,
                shape: a.shape,
                psi: a.psi,
                n: a.n,
                m: a.m,
                z_form: a.z_form,
                data: a.data,
                config: a.config,
                x_column: a.x_column,
                k: a.k,
            };
            let workers = a.workers.unwrap_or_else(default_workers);
            cmd_simulate(a.study, a.seed, a.replicates, workers, &a.out, &opts).map(|r| {
                let _ = writeln!(
                    stdout,
                    "{}: {} records, {} dropped fits, {:.1}s; written to {}",
                    r.study,
                    r.records.len(),
                    r.nonconverged,
                    r.wall_time_secs,
                    a.out.display()
                );
                EXIT_OK
            })
        }
    };
    result.unwrap_or_else(|e| {
        let _ = writeln!(stderr, "error: {e}");
        EXIT_ERROR
    })
}
