//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `cargo test --test acceptance -- 4 7` runs a subset. The worker count is
//! taken from `ORDGAM_WORKERS`, defaulting to the available cores.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use ordgam::cli::{default_accuracy_psi, default_psi_grid, run};
use ordgam::inference::credible_band;
use ordgam::simulate::{
    run_mse, run_null_calibration, run_size_power, Estimator, NullCalibration, SimFamily, SimReport, SimScenario,
    TruthShape, ALPHAS,
};
use ordgam::smoothness::{criterion, optimize_lambda, reml_criterion, CriterionKind, LOG_LAMBDA_MAX, LOG_LAMBDA_MIN};
use ordgam::{pirls_fit, Dataset, Family, ModelSpec, PenalizedProblem, TermSpec};
use ordgam_oracles::{gaussian_marginal_oracle, penalized_ls_oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Binomial, DiscreteCDF};

const FAMILIES: [SimFamily; 2] = [SimFamily::Gaussian, SimFamily::Logit];
const SHAPES: [TruthShape; 2] = [TruthShape::NearLinear, TruthShape::NonMonotone];
const SIZE_POWER_REPLICATES: usize = 2000;
const STUDY_REPLICATES: usize = 1000;
const ALPHA: f64 = ALPHAS[0];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn workers() -> usize {
    std::env::var("ORDGAM_WORKERS")
        .ok()
        .and_then(|w| w.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn within(elapsed: Duration, limit_secs: f64) -> bool {
    elapsed.as_secs_f64() < limit_secs
}

/// n = 100, one ordinal smooth (k = 6) and one parametric covariate.
fn ordinal_fixture(seed: u64, m: usize) -> PenalizedProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 100;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(1..=6) as f64).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(&z)
        .map(|(&l, &zi)| (1.1 * l).cos() + 1.5 * zi + 0.7 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let data = Dataset::new().with_column("y", y).with_column("x", x).with_column("z", z);
    ModelSpec::new(
        "y",
        Family::Gaussian,
        vec![TermSpec::ordinal("x", 6, m), TermSpec::parametric("z")],
    )
    .build(&data)
    .unwrap()
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let p = ordinal_fixture(seed, 1 + seed as usize % 2);
        let lambda = [10f64.powf(-3.0 + 0.3 * seed as f64)];
        let fit = pirls_fit(&p, &lambda).unwrap();
        let oracle = penalized_ls_oracle(&p.x, &[p.embedded_penalty(0)], &lambda, &p.y).unwrap();
        worst = worst.max((&fit.beta - &oracle).norm() / oracle.norm());
    }
    let elapsed = start.elapsed();
    Verdict::new(
        worst <= 1e-8 && within(elapsed, 5.0),
        format!("max relative error {worst:.2e} over 20 fixtures in {:.2}s", elapsed.as_secs_f64()),
    )
}

fn limit_behavior() -> Verdict {
    let start = Instant::now();
    let p1 = ordinal_fixture(101, 1);
    let f1 = pirls_fit(&p1, &[1e10]).unwrap();
    let max_f = credible_band(&p1, &f1, 1, 0.95)
        .unwrap()
        .center
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let p2 = ordinal_fixture(102, 2);
    let f2 = pirls_fit(&p2, &[1e10]).unwrap();
    let c = credible_band(&p2, &f2, 1, 0.95).unwrap().center;
    let d2 = DVector::from_fn(c.len() - 2, |i, _| c[i + 2] - 2.0 * c[i + 1] + c[i]).norm();
    let elapsed = start.elapsed();
    Verdict::new(
        max_f < 1e-4 && d2 < 1e-6 && within(elapsed, 1.0),
        format!("m=1 max|f| {max_f:.2e}, m=2 ||D2 f|| {d2:.2e}"),
    )
}

fn reml_cross_check() -> Verdict {
    let start = Instant::now();
    let mut worst_gap: f64 = 0.0;
    let mut worst_step: f64 = 0.0;
    let step = (LOG_LAMBDA_MAX - LOG_LAMBDA_MIN) / 100.0;
    for seed in 0..10u64 {
        let p = ordinal_fixture(200 + seed, 1 + seed as usize % 2);
        for log_lambda in [-2.0, 0.5, 3.0] {
            let eval = criterion(&p, &[log_lambda], CriterionKind::Reml).unwrap();
            let tau2 = eval.scale / log_lambda.exp();
            let l_r = gaussian_marginal_oracle(&p.x, &p.embedded_penalty(0), &p.y, tau2, eval.scale).unwrap();
            worst_gap = worst_gap.max((eval.value + l_r).abs());
        }
        let (grid_best, _) = (0..=100)
            .map(|i| {
                let l = LOG_LAMBDA_MIN + step * i as f64;
                (l, reml_criterion(&p, &[l]).unwrap())
            })
            .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let opt = optimize_lambda(&p, CriterionKind::Reml).unwrap();
        worst_step = worst_step.max((opt.log_lambda[0] - grid_best).abs() / step);
    }
    let elapsed = start.elapsed();
    Verdict::new(
        worst_gap <= 1e-6 && worst_step <= 1.0 && within(elapsed, 30.0),
        format!(
            "max |REML + oracle| {worst_gap:.2e}; optimizer within {worst_step:.2} grid steps; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn null_calibration() -> Verdict {
    let start = Instant::now();
    let cfg = NullCalibration::bundled(STUDY_REPLICATES, 2024, vec![1, 2]);
    let report = run_null_calibration(&cfg, workers()).unwrap();
    let elapsed = start.elapsed();
    let get = |m: usize, metric: &str, key: f64| {
        report
            .aggregate("logit", "confounder", 0.0, Estimator::Ordinal(m), metric, key)
            .unwrap()
    };
    let crit = get(2, "ks_critical_1pct", 0.0);
    let (ks2, ks1, ecdf1) = (get(2, "ks_distance", 0.0), get(1, "ks_distance", 0.0), get(1, "ecdf", 0.05));
    let m2_ok = ks2 < crit;
    let m1_ok = ks1 >= get(1, "ks_critical_1pct", 0.0) && ecdf1 > 0.05;
    Verdict::new(
        m2_ok && m1_ok && within(elapsed, 900.0),
        format!(
            "m=2 KS {ks2:.4} vs {crit:.4} ({}); m=1 KS {ks1:.4}, ECDF(0.05) {ecdf1:.3} ({}); m=2 ECDF(0.05) {:.3}; {:.0}s",
            if m2_ok { "uniform" } else { "rejected" },
            if m1_ok { "anti-conservative" } else { "not anti-conservative" },
            get(2, "ecdf", 0.05),
            elapsed.as_secs_f64()
        ),
    )
}

struct SizePower {
    reports: Vec<SimReport>,
    elapsed: Duration,
}

fn size_power() -> &'static SizePower {
    static CELL: OnceLock<SizePower> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut reports = Vec::new();
        for family in FAMILIES {
            for shape in SHAPES {
                let mut sc = SimScenario::new(family, shape, 0.0);
                sc.replicates = SIZE_POWER_REPLICATES;
                sc.seed = 77;
                let est = [Estimator::Ordinal(2), Estimator::Linear, Estimator::Factor];
                reports.push(run_size_power(&sc, &default_psi_grid(family), &est, workers()).unwrap());
            }
        }
        SizePower {
            reports,
            elapsed: start.elapsed(),
        }
    })
}

fn rejection(family: SimFamily, shape: TruthShape, psi: f64, est: Estimator) -> f64 {
    let sp = size_power();
    sp.reports
        .iter()
        .find_map(|r| r.aggregate(&family.to_string(), &shape.to_string(), psi, est, "rejection", ALPHA))
        .unwrap()
}

fn size() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for family in FAMILIES {
        for shape in SHAPES {
            let r = rejection(family, shape, 0.0, Estimator::Ordinal(2));
            ok &= (r - 0.05).abs() <= 0.015;
            parts.push(format!("{family}/{shape} {r:.4}"));
        }
    }
    // H0: factor size ≤ 0.05, rejected at 5% by an exact binomial tail
    let sp = size_power();
    let fits = sp
        .reports
        .iter()
        .map(|r| r.cell("logit", "non-monotone", 0.0, Estimator::Factor))
        .find(|c| !c.is_empty())
        .unwrap();
    let n = fits.len() as u64;
    let hits = fits.iter().filter(|r| r.p_value.is_some_and(|p| p <= ALPHA)).count() as u64;
    let tail = if hits == 0 {
        1.0
    } else {
        Binomial::new(0.05, n).unwrap().sf(hits - 1)
    };
    let factor_ok = tail < 0.05;
    Verdict::new(
        ok && factor_ok && within(sp.elapsed, 2700.0),
        format!(
            "m=2 size {}; factor logit/non-monotone {:.4} (one-sided p {tail:.2e}); {:.0}s",
            parts.join(", "),
            hits as f64 / n as f64,
            sp.elapsed.as_secs_f64()
        ),
    )
}

fn power() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for family in FAMILIES {
        let grid = default_psi_grid(family);
        let worst = grid
            .iter()
            .map(|&psi| {
                (rejection(family, TruthShape::NearLinear, psi, Estimator::Ordinal(2))
                    - rejection(family, TruthShape::NearLinear, psi, Estimator::Linear))
                .abs()
            })
            .fold(0.0, f64::max);
        let top = *grid.last().unwrap();
        let m2 = rejection(family, TruthShape::NonMonotone, top, Estimator::Ordinal(2));
        let lin = rejection(family, TruthShape::NonMonotone, top, Estimator::Linear);
        ok &= worst <= 0.05 && m2 >= lin + 0.10;
        parts.push(format!(
            "{family}: near-linear max gap {worst:.4}, non-monotone ψ={top} m=2 {m2:.3} vs linear {lin:.3}"
        ));
    }
    Verdict::new(ok, parts.join("; "))
}

struct Accuracy {
    reports: Vec<SimReport>,
    elapsed: Duration,
}

fn accuracy() -> &'static Accuracy {
    static CELL: OnceLock<Accuracy> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut reports = Vec::new();
        for family in FAMILIES {
            for shape in SHAPES {
                let mut sc = SimScenario::new(family, shape, default_accuracy_psi(family));
                sc.replicates = STUDY_REPLICATES;
                sc.seed = 99;
                reports.push(run_mse(&sc, workers()).unwrap());
            }
        }
        Accuracy {
            reports,
            elapsed: start.elapsed(),
        }
    })
}

fn accuracy_metric(family: SimFamily, shape: TruthShape, est: Estimator, metric: &str, key: f64) -> f64 {
    let psi = default_accuracy_psi(family);
    accuracy()
        .reports
        .iter()
        .find_map(|r| r.aggregate(&family.to_string(), &shape.to_string(), psi, est, metric, key))
        .unwrap()
}

fn coverage() -> Verdict {
    let nominal = |c: f64| (0.92..=0.97).contains(&c);
    let mut ok = true;
    let mut parts = Vec::new();
    for family in FAMILIES {
        let cov = |shape, m| accuracy_metric(family, shape, Estimator::Ordinal(m), "coverage_mean", 0.0);
        let (nm1, nm2) = (cov(TruthShape::NonMonotone, 1), cov(TruthShape::NonMonotone, 2));
        let (nl1, nl2) = (cov(TruthShape::NearLinear, 1), cov(TruthShape::NearLinear, 2));
        ok &= nominal(nm1) && nominal(nm2) && nl2 < 0.92 && nominal(nl1);
        parts.push(format!(
            "{family}: non-monotone m=1 {nm1:.3} m=2 {nm2:.3}, near-linear m=1 {nl1:.3} m=2 {nl2:.3}"
        ));
    }
    let elapsed = accuracy().elapsed;
    Verdict::new(
        ok && within(elapsed, 1800.0),
        format!("{}; {:.0}s", parts.join("; "), elapsed.as_secs_f64()),
    )
}

fn mse_ordering() -> Verdict {
    let median = |family, shape, est| accuracy_metric(family, shape, est, "sq_error_quantile", 0.5);
    let mut ok = true;
    let mut parts = Vec::new();
    for family in FAMILIES {
        for shape in SHAPES {
            let (m1, m2) = (median(family, shape, Estimator::Ordinal(1)), median(family, shape, Estimator::Ordinal(2)));
            ok &= m2 <= m1;
            parts.push(format!("{family}/{shape} m=2 {m2:.3} vs m=1 {m1:.3}"));
        }
    }
    let fac = median(SimFamily::Logit, TruthShape::NonMonotone, Estimator::Factor);
    let m2 = median(SimFamily::Logit, TruthShape::NonMonotone, Estimator::Ordinal(2));
    ok &= fac >= 1.5 * m2;
    parts.push(format!("logit/non-monotone factor {fac:.3} vs 1.5 x m=2 {:.3}", 1.5 * m2));
    for shape in SHAPES {
        let sep = accuracy_metric(SimFamily::Logit, shape, Estimator::Factor, "separated", 0.0);
        ok &= sep >= 1.0;
        parts.push(format!("logit/{shape} separated factor fits {sep}"));
    }
    Verdict::new(ok, parts.join("; "))
}

fn invoke(args: &[&str]) -> i32 {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("ordgam").chain(args.iter().copied()), &mut out, &mut err);
    if code != 0 {
        eprintln!("{}", String::from_utf8_lossy(&err));
    }
    code
}

fn determinism() -> Verdict {
    let dir = tempfile::TempDir::new().unwrap();
    let mut differing = Vec::new();
    for study in ["null-calibration", "size-power", "coverage", "mse"] {
        let mut files = Vec::new();
        for w in ["1", "4"] {
            let out = dir.path().join(format!("{study}-{w}"));
            let code = invoke(&[
                "simulate", study, "--seed", "4242", "--replicates", "12", "--workers", w, "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(code, 0, "{study} with {w} workers");
            files.push(std::fs::read(out.join("replicates.csv")).unwrap());
        }
        if files[0] != files[1] || files[0].is_empty() {
            differing.push(study);
        }
    }
    Verdict::new(
        differing.is_empty(),
        if differing.is_empty() {
            "per-replicate CSVs identical for 1 and 4 workers in all four studies".to_string()
        } else {
            format!("CSVs differ for {}", differing.join(", "))
        },
    )
}

fn summary_fidelity() -> Verdict {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let dir = tempfile::TempDir::new().unwrap();
    let out = dir.path().join("fit");
    let code = invoke(&[
        "fit",
        "--config",
        data.join("bpd_synthetic.json").to_str().unwrap(),
        "--data",
        data.join("bpd_synthetic.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(out.join("summary.txt")).unwrap_or_default();
    let wanted = [
        "Parametric coefficients:",
        "Approximate significance of smooth terms:",
        "edf Ref.df Chi.sq p-value",
        "Estimate Std. Error z value Pr(>|z|)",
    ];
    let missing: Vec<&str> = wanted.iter().copied().filter(|w| !text.contains(w)).collect();
    Verdict::new(
        code == 0 && missing.is_empty(),
        if missing.is_empty() {
            format!("exit {code}; all headers present")
        } else {
            format!("exit {code}; missing {missing:?}")
        },
    )
}

type Criterion = (usize, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "oracle equivalence", oracle_equivalence),
    (2, "limit behavior", limit_behavior),
    (3, "REML cross-check", reml_cross_check),
    (4, "null calibration", null_calibration),
    (5, "size", size),
    (6, "power adaptivity", power),
    (7, "coverage", coverage),
    (8, "squared-error ordering", mse_ordering),
    (9, "determinism", determinism),
    (10, "summary fidelity", summary_fidelity),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::new(false, format!("panicked: {msg}"))
            });
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s]",
            if verdict.pass { "PASS" } else { "FAIL" },
            verdict.detail,
            start.elapsed().as_secs_f64()
        );
        if !verdict.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
