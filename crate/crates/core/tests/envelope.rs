use std::f64::consts::PI;

use bqvc::envelope::{polygon_area, polygon_contains};
use bqvc::sim::{exact_quantiles, SimConfig};
use bqvc::{build_envelope, contains, coverage, curvature, DirectionGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn unit_square() {
    let grid = DirectionGrid::new(4).unwrap();
    let env = build_envelope(&grid, &[-1.0; 4]).unwrap();
    assert!(!env.empty);
    assert_eq!(env.vertices.len(), 4);
    assert!((polygon_area(&env.vertices) - 4.0).abs() < 1e-9);
    for v in &env.vertices {
        assert!((v[0].abs() - 1.0).abs() < 1e-9 && (v[1].abs() - 1.0).abs() < 1e-9);
    }
    assert_eq!(env.binding, vec![0, 1, 2, 3]);
    assert!((curvature(&env).unwrap() - PI / 4.0).abs() < 1e-9);
}

#[test]
fn regular_hundred_gon() {
    let grid = DirectionGrid::new(100).unwrap();
    let env = build_envelope(&grid, &[-1.0; 100]).unwrap();
    assert_eq!(env.vertices.len(), 100);
    let want = 100.0 * (PI / 100.0).tan();
    assert!((polygon_area(&env.vertices) - want).abs() < 1e-6);
    // Turn 2π/d over edge 2 tan(π/d).
    let kappa = curvature(&env).unwrap();
    let exact = (PI / 50.0) / (2.0 * (PI / 100.0).tan());
    assert!((kappa - exact).abs() < 1e-9 && (kappa - 1.0).abs() < 1e-3);
}

#[test]
fn contains_examples() {
    let grid = DirectionGrid::new(4).unwrap();
    let q = [-1.0; 4];
    assert!(contains(&grid, &q, [0.0, 0.0]));
    assert!(contains(&grid, &q, [1.0, -1.0]));
    assert!(!contains(&grid, &q, [1.0 + 1e-12, 0.0]));
    assert_eq!(coverage(&grid, &q, &[[0.0, 0.0], [2.0, 0.0]]).unwrap(), 0.5);
    assert!(coverage(&grid, &q, &[]).is_err());
}

#[test]
fn empty_and_degenerate() {
    let grid = DirectionGrid::new(4).unwrap();
    // x ≤ −1 and x ≥ 1 cannot both hold.
    let env = build_envelope(&grid, &[1.0, -1.0, 1.0, -1.0]).unwrap();
    assert!(env.empty && env.vertices.is_empty());
    assert!(curvature(&env).is_err());
    // Point mass: every constraint is tight at the origin.
    let env = build_envelope(&grid, &[0.0; 4]).unwrap();
    assert!(!env.empty);
    assert!(env.vertices.iter().all(|v| v[0].abs() < 1e-9 && v[1].abs() < 1e-9));
    assert!(curvature(&env).is_err());
    assert!(build_envelope(&grid, &[0.0; 3]).is_err());
}

#[test]
fn gaussian_envelope_coverage() {
    let cfg = SimConfig::default();
    let grid = DirectionGrid::new(100).unwrap();
    let x = cfg.probe_x();
    let t = cfg.probe_t();
    let q = exact_quantiles(&cfg, &grid, &x, t, 0.05).unwrap();
    let mu = cfg.coeff_set.mean(&x, t);
    let sd = 0.8f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<[f64; 2]> = (0..20_000)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [mu[0] + sd * a, mu[1] + sd * b]
        })
        .collect();
    let nu = coverage(&grid, &q, &pts).unwrap();
    assert!((nu - 0.7415).abs() < 0.02, "{nu}");
}

#[test]
fn analytic_envelopes_nest() {
    let cfg = SimConfig::default();
    let grid = DirectionGrid::new(60).unwrap();
    let (x, t) = (cfg.probe_x(), cfg.probe_t());
    let taus = [0.05, 0.1, 0.2, 0.3];
    let envs: Vec<_> = taus
        .iter()
        .map(|&tau| build_envelope(&grid, &exact_quantiles(&cfg, &grid, &x, t, tau).unwrap()).unwrap())
        .collect();
    for w in envs.windows(2) {
        let (outer, inner) = (&w[0], &w[1]);
        for v in &inner.vertices {
            assert!(polygon_contains(&outer.vertices, *v, 1e-9));
        }
        assert!(polygon_area(&inner.vertices) < polygon_area(&outer.vertices));
    }
    // Smaller envelopes bend more sharply.
    let kappas: Vec<f64> = envs.iter().map(|e| curvature(e).unwrap()).collect();
    assert!(kappas.windows(2).all(|w| w[0] < w[1]));
}

fn random_q(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    // Support function of a random ellipse shifted by a random center, minus
    // noise, so the envelope is nonempty but irregular.
    let (a, b) = (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0));
    let c = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
    DirectionGrid::new(d)
        .unwrap()
        .directions()
        .iter()
        .map(|s| {
            s[0] * c[0] + s[1] * c[1] - (a * a * s[0] * s[0] + b * b * s[1] * s[1]).sqrt() - rng.random_range(0.0..0.3)
        })
        .collect()
}

proptest! {
    #[test]
    fn translation_equivariance(seed in 0u64..10_000, cx in -50.0f64..50.0, cy in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = DirectionGrid::new(40).unwrap();
        let q = random_q(&mut rng, 40);
        let shifted: Vec<f64> = grid.directions().iter().zip(&q).map(|(s, q)| q + s[0] * cx + s[1] * cy).collect();
        let a = build_envelope(&grid, &q).unwrap();
        let b = build_envelope(&grid, &shifted).unwrap();
        prop_assert_eq!(a.vertices.len(), b.vertices.len());
        prop_assert_eq!(&a.binding, &b.binding);
        for (u, v) in a.vertices.iter().zip(&b.vertices) {
            prop_assert!((u[0] + cx - v[0]).abs() < 1e-9 && (u[1] + cy - v[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn vertices_are_feasible_convex_and_bound(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = DirectionGrid::new(50).unwrap();
        let q = random_q(&mut rng, 50);
        let env = build_envelope(&grid, &q).unwrap();
        let v = &env.vertices;
        prop_assert!(v.len() >= 3);
        for p in v {
            for (s, qr) in grid.directions().iter().zip(&q) {
                prop_assert!(s[0] * p[0] + s[1] * p[1] - qr >= -1e-9 * qr.abs().max(1.0));
            }
        }
        // Counterclockwise and convex.
        let n = v.len();
        for i in 0..n {
            let (a, b, c) = (v[i], v[(i + 1) % n], v[(i + 2) % n]);
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            prop_assert!(cross > -1e-9);
        }
        // Every binding line touches some vertex; every edge lies on a binding line.
        for &r in &env.binding {
            let s = grid.direction(r);
            let slack = v.iter().map(|p| s[0] * p[0] + s[1] * p[1] - q[r]).fold(f64::INFINITY, f64::min);
            prop_assert!(slack.abs() < 1e-8);
        }
        for i in 0..n {
            let (a, b) = (v[i], v[(i + 1) % n]);
            let on_line = env.binding.iter().any(|&r| {
                let s = grid.direction(r);
                (s[0] * a[0] + s[1] * a[1] - q[r]).abs() < 1e-8 && (s[0] * b[0] + s[1] * b[1] - q[r]).abs() < 1e-8
            });
            prop_assert!(on_line);
        }
    }

    #[test]
    fn polygon_and_constraints_agree(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = DirectionGrid::new(30).unwrap();
        let q = random_q(&mut rng, 30);
        let env = build_envelope(&grid, &q).unwrap();
        for _ in 0..200 {
            let p = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
            let margin = grid.directions().iter().zip(&q).map(|(s, qr)| s[0] * p[0] + s[1] * p[1] - qr).fold(f64::INFINITY, f64::min);
            if margin.abs() < 1e-6 {
                continue;
            }
            prop_assert_eq!(contains(&grid, &q, p), polygon_contains(&env.vertices, p, 0.0));
        }
    }
}
