use nalgebra::{DMatrix, DVector};
use ordgam::simulate::{
    fit_estimator, generate_replicate, run_coverage, run_null_calibration, run_size_power, Estimator,
    NullCalibration, SimFamily, SimScenario, TruthShape, ZForm,
};
use ordgam::TermSpec;
use ordgam_oracles::{glrt_factor_oracle, OracleFamily};

fn records_csv(report: &ordgam::simulate::SimReport) -> Vec<u8> {
    let mut buf = Vec::new();
    report.write_records(&mut buf).unwrap();
    buf
}

#[test]
fn coverage_records_do_not_depend_on_workers() {
    let mut sc = SimScenario::new(SimFamily::Logit, TruthShape::NonMonotone, 1.6);
    sc.replicates = 16;
    sc.seed = 3;
    let a = run_coverage(&sc, 1).unwrap();
    let b = run_coverage(&sc, 4).unwrap();
    assert_eq!(records_csv(&a), records_csv(&b));
    assert_eq!(a.aggregates, b.aggregates);
}

#[test]
fn null_calibration_does_not_depend_on_workers() {
    let cfg = NullCalibration::bundled(12, 8, vec![1, 2]);
    let a = run_null_calibration(&cfg, 1).unwrap();
    let b = run_null_calibration(&cfg, 3).unwrap();
    assert_eq!(records_csv(&a), records_csv(&b));
}

#[test]
fn seeds_change_the_draws() {
    let sc = SimScenario::new(SimFamily::Gaussian, TruthShape::NearLinear, 0.5);
    let other = SimScenario { seed: 2, ..sc };
    assert_ne!(generate_replicate(&sc, 0), generate_replicate(&other, 0));
    assert_ne!(generate_replicate(&sc, 0), generate_replicate(&sc, 1));
    assert_eq!(generate_replicate(&sc, 5), generate_replicate(&sc, 5));
}

#[test]
fn linear_slope_test_holds_its_size() {
    // with √z known, the slope z-test is a plain linear-model test
    let mut sc = SimScenario::new(SimFamily::Gaussian, TruthShape::NearLinear, 0.0);
    sc.replicates = 400;
    sc.seed = 21;
    sc.z_form = ZForm::Sqrt;
    let r = run_size_power(&sc, &[0.0], &[Estimator::Linear], 4).unwrap();
    let rate = r
        .aggregate("gaussian", "near-linear", 0.0, Estimator::Linear, "rejection", 0.05)
        .unwrap();
    // 99.9% binomial range around 0.05 for 400 draws
    assert!((0.02..=0.09).contains(&rate), "rejection rate {rate}");
}

#[test]
fn factor_test_matches_independent_glrt() {
    for (family, oracle_family) in [
        (SimFamily::Gaussian, OracleFamily::Gaussian),
        (SimFamily::Logit, OracleFamily::Binomial),
    ] {
        let sc = SimScenario::new(family, TruthShape::NonMonotone, 1.0);
        for i in 0..5 {
            let mut data = generate_replicate(&sc, i);
            let sqrt_z: Vec<f64> = data.column("z").unwrap().iter().map(|v| v.sqrt()).collect();
            data.insert("sqrt_z", sqrt_z.clone());
            let ours = fit_estimator(&data, family.family(), &[TermSpec::parametric("sqrt_z")], 6, Estimator::Factor)
                .unwrap();

            let y = DVector::from_column_slice(data.column("y").unwrap());
            let levels: Vec<usize> = data.column("x").unwrap().iter().map(|&v| v as usize).collect();
            let cov = DMatrix::from_column_slice(y.len(), 1, &sqrt_z);
            let oracle = glrt_factor_oracle(&y, &levels, 6, &cov, oracle_family).unwrap();
            assert!(
                (ours.p_value - oracle.p_value).abs() < 1e-7,
                "{family} replicate {i}: {} vs {}",
                ours.p_value,
                oracle.p_value
            );
            assert_eq!(ours.separated, oracle.separated);
        }
    }
}
