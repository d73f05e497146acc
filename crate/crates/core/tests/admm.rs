use bqvc::admm::{penalized_objective, write_trace_csv};
use bqvc::{solve_pqr, AdmmOptions, BasisSpec, PqrSolver, SplineBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn total_loss(residuals: impl Iterator<Item = f64>, tau: f64) -> f64 {
    residuals.map(|u| if u < 0.0 { (tau - 1.0) * u } else { tau * u }).sum()
}

fn tight() -> AdmmOptions {
    AdmmOptions { eps_abs: 1e-9, eps_rel: 1e-9, max_iters: 200_000, ..Default::default() }
}

// Unpenalized linear quantile regression attains its optimum at a fit that
// interpolates p observations; with p = 2, enumerate all pairs.
fn enumeration_optimum(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> f64 {
    let n = x.nrows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let a = DMatrix::from_row_slice(2, 2, &[x[(i, 0)], x[(i, 1)], x[(j, 0)], x[(j, 1)]]);
            let Some(inv) = a.try_inverse() else { continue };
            let b = inv * DVector::from_vec(vec![y[i], y[j]]);
            let loss = total_loss((y - x * &b).iter().copied(), tau);
            best = best.min(loss);
        }
    }
    best
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
    let y = DVector::from_fn(n, |i, _| 0.5 + 1.5 * x[(i, 1)] + rng.random_range(-1.0..1.0));
    (x, y)
}

#[test]
fn matches_subset_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let omega = DMatrix::zeros(2, 2);
    for case in 0..25 {
        let tau = [0.1, 0.3, 0.5, 0.7][case % 4];
        let (x, y) = random_instance(&mut rng, 20);
        let res = solve_pqr(&x, &y, tau, 0.0, &omega, &tight()).unwrap();
        let exact = enumeration_optimum(&x, &y, tau);
        let rel = (res.objective - exact) / exact;
        assert!(rel.abs() < 1e-3, "case {case}: admm {} vs exact {exact}", res.objective);
    }
}

#[test]
fn intercept_median() {
    let x = DMatrix::from_element(5, 1, 1.0);
    let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    let res = solve_pqr(&x, &y, 0.5, 0.0, &DMatrix::zeros(1, 1), &AdmmOptions::default()).unwrap();
    assert!(res.converged);
    assert!((res.b[0] - 3.0).abs() < 0.05, "{}", res.b[0]);
}

#[test]
fn large_penalty_gives_affine_fit() {
    let basis = BasisSpec::default().build().unwrap();
    let ts: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
    let x = basis.eval_matrix(&ts).unwrap();
    let y = DVector::from_iterator(200, ts.iter().map(|t| (6.0 * t).sin() + 2.0 * t));
    let res = solve_pqr(&x, &y, 0.5, 1e6, basis.omega(), &tight()).unwrap();
    // Second differences of the fitted curve vanish when it is affine.
    let f = &res.fitted;
    let h = ts[1] - ts[0];
    let max_d2 = (1..199).map(|i| ((f[i + 1] - 2.0 * f[i] + f[i - 1]) / (h * h)).abs()).fold(0.0, f64::max);
    assert!(max_d2 < 1e-2, "max second difference {max_d2}");
    // Unpenalized fit is visibly curved.
    let free = solve_pqr(&x, &y, 0.5, 0.0, basis.omega(), &tight()).unwrap();
    let free_d2 = (1..199)
        .map(|i| ((free.fitted[i + 1] - 2.0 * free.fitted[i] + free.fitted[i - 1]) / (h * h)).abs())
        .fold(0.0, f64::max);
    assert!(free_d2 > 10.0);
}

#[test]
fn objective_and_residual_invariants() {
    let basis = SplineBasis::reproduction_default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ts: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
    let x = basis.eval_matrix(&ts).unwrap();
    let y = DVector::from_iterator(300, ts.iter().map(|t| t * t + rng.random_range(-0.3..0.3)));
    for opts in [AdmmOptions::default(), AdmmOptions { unscaled_dual_tolerance: true, ..Default::default() }] {
        let res = solve_pqr(&x, &y, 0.2, 0.01, basis.omega(), &opts).unwrap();
        let recomputed = penalized_objective(&x, &y, &res.b, 0.2, 0.01, basis.omega());
        assert!((res.objective - recomputed).abs() <= 1e-10 * recomputed.abs().max(1.0));
        assert!(res.converged);
        assert!(res.primal_residual <= res.eps_primal);
        assert!(res.dual_residual <= res.eps_dual);
        // Fitted values are X b.
        assert!((&x * &res.b - &res.fitted).amax() < 1e-10);
    }
}

#[test]
fn cached_factorization_is_bitwise_reproducible() {
    let basis = SplineBasis::reproduction_default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ts: Vec<f64> = (0..250).map(|_| rng.random::<f64>()).collect();
    let x = basis.eval_matrix(&ts).unwrap();
    let ys: Vec<DVector<f64>> = (0..3)
        .map(|k| {
            DVector::from_iterator(250, ts.iter().map(|t| (t * (k + 1) as f64).cos() + rng.random_range(-0.5..0.5)))
        })
        .collect();
    let opts = AdmmOptions::default();
    let solver = PqrSolver::new(&x, 0.1, basis.omega(), &opts).unwrap();
    for y in &ys {
        let cached = solver.solve(y, 0.3).unwrap();
        let fresh = solve_pqr(&x, y, 0.3, 0.1, basis.omega(), &opts).unwrap();
        assert_eq!(cached.b, fresh.b);
        assert_eq!(cached.iterations, fresh.iterations);
        assert_eq!(cached.objective.to_bits(), fresh.objective.to_bits());
    }
}

#[test]
fn max_iters_reports_not_converged() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, y) = random_instance(&mut rng, 50);
    let opts = AdmmOptions { max_iters: 2, eps_abs: 1e-12, eps_rel: 1e-12, ..Default::default() };
    let res = solve_pqr(&x, &y, 0.5, 0.0, &DMatrix::zeros(2, 2), &opts).unwrap();
    assert!(!res.converged);
    assert_eq!(res.iterations, 2);
    assert!(res.primal_residual.is_finite());
}

#[test]
fn rank_deficient_design_is_regularized() {
    // Duplicate column: XᵀX singular, the jitter keeps the system solvable.
    let x = DMatrix::from_fn(30, 2, |i, _| i as f64 / 30.0);
    let y = DVector::from_fn(30, |i, _| i as f64 / 15.0);
    let res = solve_pqr(&x, &y, 0.5, 0.0, &DMatrix::zeros(2, 2), &tight()).unwrap();
    assert!((&x * &res.b - &y).amax() < 1e-3);
}

#[test]
fn dimension_mismatch_rejected() {
    let x = DMatrix::from_element(4, 2, 1.0);
    let y = DVector::zeros(3);
    assert!(solve_pqr(&x, &y, 0.5, 0.0, &DMatrix::zeros(2, 2), &AdmmOptions::default()).is_err());
    let y = DVector::zeros(4);
    assert!(solve_pqr(&x, &y, 0.5, 0.0, &DMatrix::zeros(3, 3), &AdmmOptions::default()).is_err());
    assert!(solve_pqr(&x, &y, 1.5, 0.0, &DMatrix::zeros(2, 2), &AdmmOptions::default()).is_err());
}

#[test]
fn trace_csv() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y) = random_instance(&mut rng, 40);
    let opts = AdmmOptions { trace: true, ..Default::default() };
    let res = solve_pqr(&x, &y, 0.5, 0.0, &DMatrix::zeros(2, 2), &opts).unwrap();
    assert_eq!(res.trace.len(), res.iterations);
    let mut buf = Vec::new();
    write_trace_csv(&res.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,r_pri,r_dual,objective\n"));
    assert_eq!(text.lines().count(), res.iterations + 1);
}
