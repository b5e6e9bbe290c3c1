use nalgebra::{DMatrix, DVector};
use ordgam::design::Constraint;
use ordgam::inference::{credible_band, deviance_explained, normal_quantile, wald_smooth_test};
use ordgam::smoothness::{optimize_lambda, CriterionKind};
use ordgam::{pirls_fit, Dataset, Family, ModelSpec, TermRole, TermSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const TRUTH: [f64; 6] = [0.0, 1.0, 0.3, 0.9, 0.1, 0.6];

fn ordinal_data(seed: u64, n: usize, signal: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(1..=6) as f64).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = x
        .iter()
        .zip(&z)
        .map(|(&l, &zi)| signal * TRUTH[l as usize - 1] + zi + rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new().with_column("y", y).with_column("x", x).with_column("z", z)
}

#[test]
fn unpenalized_band_is_classical_interval() {
    let data = ordinal_data(1, 90, 1.0);
    let spec = ModelSpec::new("y", Family::Gaussian, vec![TermSpec::ordinal("x", 6, 2)]);
    let p = spec.build(&data).unwrap();
    let fit = pirls_fit(&p, &[0.0]).unwrap();
    let band = credible_band(&p, &fit, 1, 0.95).unwrap();

    // group means, weighted grand mean, and pooled variance by hand
    let x = data.column("x").unwrap();
    let y = data.column("y").unwrap();
    let n = y.len() as f64;
    let mut sum = [0.0; 6];
    let mut cnt = [0.0; 6];
    for (&l, &v) in x.iter().zip(y) {
        sum[l as usize - 1] += v;
        cnt[l as usize - 1] += 1.0;
    }
    let mean: Vec<f64> = (0..6).map(|l| sum[l] / cnt[l]).collect();
    let grand: f64 = (0..6).map(|l| cnt[l] * mean[l]).sum::<f64>() / n;
    let rss: f64 = x.iter().zip(y).map(|(&l, &v)| (v - mean[l as usize - 1]).powi(2)).sum();
    let sigma2 = rss / (n - 6.0);
    let w: Vec<f64> = cnt.iter().map(|c| c / n).collect();
    let z = normal_quantile(0.975);
    for l in 0..6 {
        let var = sigma2
            * ((1.0 - w[l]).powi(2) / cnt[l]
                + (0..6).filter(|&m| m != l).map(|m| w[m] * w[m] / cnt[m]).sum::<f64>());
        assert!((band.center[l] - (mean[l] - grand)).abs() < 1e-9);
        assert!((band.half_width[l] - z * var.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn unpenalized_wald_matches_dummy_contrast_test() {
    let data = ordinal_data(2, 120, 0.5);
    let spec = ModelSpec::new(
        "y",
        Family::Gaussian,
        vec![TermSpec::parametric("z"), TermSpec::ordinal("x", 6, 2)],
    );
    let p = spec.build(&data).unwrap();
    let fit = pirls_fit(&p, &[0.0]).unwrap();
    let t = p.term_index("s(x)").unwrap();
    let ours = wald_smooth_test(&p, &fit, t).unwrap();

    // treatment-coded linear model: intercept, z, dummies for levels 2..6
    let x = data.column("x").unwrap();
    let zc = data.column("z").unwrap();
    let n = x.len();
    let xm = DMatrix::from_fn(n, 7, |i, j| match j {
        0 => 1.0,
        1 => zc[i],
        _ => f64::from(u8::from(x[i] as usize == j)),
    });
    let y = DVector::from_column_slice(data.column("y").unwrap());
    let xtx_inv = (xm.transpose() * &xm).try_inverse().unwrap();
    let beta = &xtx_inv * xm.transpose() * &y;
    let r = &y - &xm * &beta;
    let sigma2 = r.dot(&r) / (n as f64 - 7.0);
    let g = beta.rows(2, 5).into_owned();
    let cov = xtx_inv.view((2, 2), (5, 5)).into_owned() * sigma2;
    let t_classic = g.dot(&(cov.try_inverse().unwrap() * &g));
    assert!((ours.statistic - t_classic).abs() / t_classic < 1e-6);
    assert!((ours.ref_df - 5.0).abs() < 1e-9);
}

#[test]
fn statistic_ignores_identifiability_constraint() {
    let data = ordinal_data(3, 150, 1.0);
    let make = |c: Constraint| {
        ModelSpec::new(
            "y",
            Family::Gaussian,
            vec![
                TermSpec::parametric("z"),
                TermSpec {
                    column: "x".into(),
                    role: TermRole::Ordinal { k: 6, m: 2, constraint: c },
                },
            ],
        )
        .build(&data)
        .unwrap()
    };
    let a = make(Constraint::SumToZero);
    let b = make(Constraint::Reference);
    for lambda in [0.05, 1.0, 20.0] {
        let fa = pirls_fit(&a, &[lambda]).unwrap();
        let fb = pirls_fit(&b, &[lambda]).unwrap();
        let ta = wald_smooth_test(&a, &fa, 2).unwrap();
        let tb = wald_smooth_test(&b, &fb, 2).unwrap();
        assert!((ta.statistic - tb.statistic).abs() / ta.statistic < 1e-6, "{ta:?} {tb:?}");
        assert!((ta.edf - tb.edf).abs() < 1e-8);
    }
    // REML lands on the same λ̂ for both parameterizations
    let sa = optimize_lambda(&a, CriterionKind::Reml).unwrap();
    let sb = optimize_lambda(&b, CriterionKind::Reml).unwrap();
    assert!((sa.log_lambda[0] - sb.log_lambda[0]).abs() < 5e-3);
}

#[test]
fn deviance_explained_by_hand() {
    let z = [0.1, 0.4, 0.35, 0.8, 0.9, 0.15, 0.6, 0.55, 0.05, 0.75];
    let y = [1.2, 2.1, 1.7, 3.3, 3.9, 0.8, 2.5, 2.9, 0.6, 3.0];
    let data = Dataset::new().with_column("y", y.to_vec()).with_column("z", z.to_vec());
    let p = ModelSpec::new("y", Family::Gaussian, vec![TermSpec::parametric("z")])
        .build(&data)
        .unwrap();
    let fit = pirls_fit(&p, &[]).unwrap();
    let zm = z.iter().sum::<f64>() / 10.0;
    let ym = y.iter().sum::<f64>() / 10.0;
    let sxy: f64 = z.iter().zip(&y).map(|(a, b)| (a - zm) * (b - ym)).sum();
    let sxx: f64 = z.iter().map(|a| (a - zm).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - ym).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!((deviance_explained(&fit) - r2).abs() < 1e-12);
}

#[test]
fn bands_narrow_with_more_data() {
    let spec = ModelSpec::new("y", Family::Gaussian, vec![TermSpec::ordinal("x", 6, 2)]);
    let median_width = |n: usize| {
        let mut widths: Vec<f64> = (0..100)
            .map(|r| {
                let p = spec.build(&ordinal_data(1000 + r, n, 1.0)).unwrap();
                let sf = optimize_lambda(&p, CriterionKind::Reml).unwrap();
                let band = credible_band(&p, &sf.fit, 1, 0.95).unwrap();
                band.half_width.iter().sum::<f64>() / 6.0
            })
            .collect();
        widths.sort_by(f64::total_cmp);
        widths[50]
    };
    assert!(median_width(200) < median_width(100));
}
