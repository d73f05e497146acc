use bqvc::harness::{evaluate_checks, format_report_text, oracle_metrics, run_replications, Tolerances};
use bqvc::sim::{
    analytic_coverage, gen_dataset, replication_seed, residual_points, AnalyticDist, CoeffSet, ErrorDist, SimConfig,
};
use bqvc::stats::empirical_quantile;
use bqvc::{AdmmOptions, BasisSpec, DirectionGrid, PsOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn moments(err: ErrorDist, n: usize) -> ([f64; 2], [f64; 2], f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws: Vec<[f64; 2]> = (0..n).map(|_| err.sample(&mut rng)).collect();
    let nf = n as f64;
    let mean = [0, 1].map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / nf);
    let var = [0, 1].map(|k| draws.iter().map(|d| (d[k] - mean[k]).powi(2)).sum::<f64>() / nf);
    let cov = draws.iter().map(|d| (d[0] - mean[0]) * (d[1] - mean[1])).sum::<f64>() / nf;
    let skew = draws.iter().map(|d| (d[0] - mean[0]).powi(3)).sum::<f64>() / nf / var[0].powf(1.5);
    (mean, var, cov / (var[0] * var[1]).sqrt(), skew)
}

#[test]
fn error_laws() {
    let (mean, var, corr, _) = moments(ErrorDist::I, 100_000);
    assert!(mean.iter().all(|m| m.abs() < 0.01));
    assert!(var.iter().all(|v| (v - 0.8).abs() < 0.02), "{var:?}");
    assert!(corr.abs() < 0.02);

    // t₃ has no fourth moment, so compare quartiles rather than variances.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut first: Vec<f64> = (0..100_000).map(|_| ErrorDist::II.sample(&mut rng)[0]).collect();
    let iqr = empirical_quantile(&mut first, 0.75) - empirical_quantile(&mut first, 0.25);
    let scale = 0.8f64.powi(5).sqrt();
    let t3_q75 = StudentsT::new(0.0, 1.0, 3.0).unwrap().inverse_cdf(0.75);
    assert!((iqr / (2.0 * t3_q75 * scale) - 1.0).abs() < 0.03, "{iqr}");

    // One shared χ²₁ term: correlation 1/3, right skew.
    let (mean, var, corr, skew) = moments(ErrorDist::III, 100_000);
    assert!(mean.iter().all(|m| (m - 2.4).abs() < 0.03));
    assert!(var.iter().all(|v| (v - 3.84).abs() < 0.1));
    assert!(corr > 0.2 && (corr - 1.0 / 3.0).abs() < 0.02);
    assert!(skew > 0.0);
}

#[test]
fn noise_levels_across_laws() {
    let sd = |e: ErrorDist| e.marginal_sd();
    assert!(sd(ErrorDist::II) / sd(ErrorDist::I) <= 1.6);
    // Law III is noticeably noisier than the other two.
    let ratio = sd(ErrorDist::III) / sd(ErrorDist::I);
    assert!((ratio - 2.19).abs() < 0.01, "{ratio}");
}

#[test]
fn coefficient_functions() {
    let b = CoeffSet::Smooth.coefficients(0.0);
    assert_eq!(b, [[1.0, 2.0, -1.0], [-1.0, -1.0, 3.0]]);
    let r = CoeffSet::Rough.coefficients(1.0);
    assert!((r[0][0] - 40.0 / 3.0).abs() < 1e-12 && (r[0][1] + 4.0).abs() < 1e-12);
    assert_eq!(CoeffSet::Smooth.mean(&[1.0, 0.0, 0.0], 0.0), [1.0, -1.0]);
}

#[test]
fn generation_is_seeded() {
    let cfg = SimConfig { n: 20, grid_points: 6, ..Default::default() };
    let s = replication_seed(cfg.seed, 3);
    let a = gen_dataset(&cfg, s);
    assert_eq!(a, gen_dataset(&cfg, s));
    assert_ne!(a, gen_dataset(&cfg, replication_seed(cfg.seed, 4)));
    assert_eq!(a.n_subjects(), 20);
    assert_eq!(a.n_grid(), 6);
    // Binary and uniform covariates after the intercept.
    let cov = a.covariates();
    for i in 0..20 {
        assert_eq!(cov[(i, 0)], 1.0);
        assert!(cov[(i, 1)] == 0.0 || cov[(i, 1)] == 1.0);
        assert!((0.0..1.0).contains(&cov[(i, 2)]));
    }
    assert_eq!(residual_points(&cfg, &a).len(), 120);
}

#[test]
fn analytic_coverages() {
    let g = |t| analytic_coverage(AnalyticDist::Gaussian, t).unwrap();
    let t3 = |t| analytic_coverage(AnalyticDist::T3, t).unwrap();
    assert!((g(0.05) - 0.7415).abs() < 5e-4);
    assert!((g(0.1) - 0.5600).abs() < 5e-4);
    assert!((g(0.2) - 0.2982).abs() < 5e-4);
    assert!((t3(0.05) - 0.79).abs() < 0.01);
    assert!((t3(0.1) - 0.62).abs() < 0.01);
}

#[test]
fn oracle_coverage_near_analytic() {
    let grid = DirectionGrid::new(100).unwrap();
    for (err, dist) in [(ErrorDist::I, AnalyticDist::Gaussian), (ErrorDist::II, AnalyticDist::T3)] {
        let cfg = SimConfig { error: err, ..Default::default() };
        for tau in [0.05, 0.1] {
            let m = oracle_metrics(&cfg, &grid, tau).unwrap();
            let want = analytic_coverage(dist, tau).unwrap();
            assert!((m.nu - want).abs() < 0.02, "{err:?} tau={tau}: {} vs {want}", m.nu);
        }
    }
}

#[test]
fn small_study_is_reproducible() {
    let cfg = SimConfig {
        n: 30,
        grid_points: 8,
        directions: 12,
        tau_levels: vec![0.1, 0.2],
        replications: 2,
        oracle_draws: 500,
        ..Default::default()
    };
    let basis = BasisSpec { knot_count: Some(3), ..Default::default() }.build().unwrap();
    let ps = PsOptions { lambda: Some(0.01), ..Default::default() };
    let admm = AdmmOptions::default();
    let a = run_replications(&cfg, &basis, &ps, &admm).unwrap();
    let b = run_replications(&cfg, &basis, &ps, &admm).unwrap();
    assert_eq!(a, b);
    assert!(a.failed.is_empty());
    assert_eq!(a.results.len(), 4);
    assert_eq!(a.rows.len(), 4);
    assert_eq!(format_report_text(&[a.clone()]), format_report_text(&[b]));
    let checks = evaluate_checks(&[a], &Tolerances::default());
    assert!(checks.iter().any(|c| c.name.contains("oracle kappa")));

    let bad = SimConfig { replications: 1, ..cfg };
    assert!(run_replications(&bad, &basis, &ps, &admm).is_err());
}
