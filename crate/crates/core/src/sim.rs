//! Simulation designs: coefficient sets, error laws, dataset generation and
//! population-level oracles at a probe point.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::{DirectionGrid, FunctionalDataset};
use crate::error::{Error, Result};
use crate::loss::validate_tau;
use crate::stats::empirical_quantile;

/// Which varying-coefficient functions drive the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoeffSet {
    Smooth,
    Rough,
}

/// Error laws: spherical Gaussian, bivariate t₃, and correlated scaled χ²₃.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorDist {
    I,
    II,
    III,
}

impl CoeffSet {
    pub fn label(self) -> &'static str {
        match self {
            CoeffSet::Smooth => "smooth",
            CoeffSet::Rough => "rough",
        }
    }

    /// `(β₁(t), β₂(t))`, each ordered as (intercept, X₁, X₂).
    pub fn coefficients(self, t: f64) -> [[f64; 3]; 2] {
        match self {
            CoeffSet::Smooth => {
                [[2.0 * t + 1.0, t.sin() + 2.0, t.cos() - 2.0], [2.0 * t - 1.0, t.cos() - 2.0, t.sin() + 3.0]]
            }
            CoeffSet::Rough => [
                [40.0 * t / (2.0 * t + 1.0), (t * t + 3.0) / (t - 2.0), t + 3.0],
                [(t + 1.0).ln(), t + 1.0, 3.0 * t * t - 2.0],
            ],
        }
    }

    /// `(xᵀβ₁(t), xᵀβ₂(t))` for `x = (1, X₁, X₂)`.
    pub fn mean(self, x: &[f64; 3], t: f64) -> [f64; 2] {
        let beta = self.coefficients(t);
        let dot = |b: &[f64; 3]| b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        [dot(&beta[0]), dot(&beta[1])]
    }
}

impl ErrorDist {
    pub fn label(self) -> &'static str {
        match self {
            ErrorDist::I => "I",
            ErrorDist::II => "II",
            ErrorDist::III => "III",
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> [f64; 2] {
        match self {
            ErrorDist::I => {
                let sd = 0.8f64.sqrt();
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [sd * a, sd * b]
            }
            ErrorDist::II => {
                let scale = 0.8f64.powi(5).sqrt();
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let chi: f64 = ChiSquared::new(3.0).expect("valid df").sample(rng);
                let mix = (chi / 3.0).sqrt();
                [scale * a / mix, scale * b / mix]
            }
            ErrorDist::III => {
                let mut a = [0.0f64; 5];
                for v in a.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = z * z;
                }
                [0.8 * (a[0] + a[1] + a[2]), 0.8 * (a[2] + a[3] + a[4])]
            }
        }
    }

    /// Marginal standard deviation of each error coordinate.
    pub fn marginal_sd(self) -> f64 {
        match self {
            ErrorDist::I => 0.8f64.sqrt(),
            // t₃ has variance 3 times its squared scale.
            ErrorDist::II => (3.0 * 0.8f64.powi(5)).sqrt(),
            // 0.8 χ²₃: variance 0.64 · 6.
            ErrorDist::III => (0.64f64 * 6.0).sqrt(),
        }
    }
}

/// Where the coverage rate of an estimated envelope is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum CoverageTarget {
    /// Every error draw of the replication, shifted to the probe's true
    /// conditional mean.
    Residual,
    /// Raw observations whose covariates and grid point lie near the probe.
    NearProbe { x_tol: f64, t_tol: f64 },
}

impl Default for CoverageTarget {
    fn default() -> Self {
        CoverageTarget::Residual
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub coeff_set: CoeffSet,
    pub error: ErrorDist,
    pub n: usize,
    pub grid_points: usize,
    pub directions: usize,
    pub tau_levels: Vec<f64>,
    /// `(X₁, X₂, t)`.
    pub probe: [f64; 3],
    pub replications: usize,
    pub seed: u64,
    pub oracle_draws: usize,
    pub coverage: CoverageTarget,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            coeff_set: CoeffSet::Smooth,
            error: ErrorDist::I,
            n: 200,
            grid_points: 50,
            directions: 100,
            tau_levels: vec![0.05, 0.1, 0.2],
            probe: [1.0, 0.5, 0.7],
            replications: 20,
            seed: 20240601,
            oracle_draws: 5000,
            coverage: CoverageTarget::Residual,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::Config("sim: n must be at least p + 1 = 4".into()));
        }
        if self.grid_points < 2 {
            return Err(Error::Config("sim: grid_points must be at least 2".into()));
        }
        if self.directions < 3 {
            return Err(Error::Config("sim: at least 3 directions are needed".into()));
        }
        if self.tau_levels.is_empty() || self.tau_levels.iter().any(|&t| validate_tau(t).is_err()) {
            return Err(Error::Config("sim: tau_levels must be nonempty and inside (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.probe[2]) {
            return Err(Error::Config("sim: probe t must lie in [0, 1]".into()));
        }
        if self.oracle_draws == 0 {
            return Err(Error::Config("sim: oracle_draws must be positive".into()));
        }
        Ok(())
    }

    /// Covariate vector `(1, X₁, X₂)` of the probe.
    pub fn probe_x(&self) -> [f64; 3] {
        [1.0, self.probe[0], self.probe[1]]
    }

    pub fn probe_t(&self) -> f64 {
        self.probe[2]
    }

    pub fn t_grid(&self) -> Vec<f64> {
        crate::spline::linspace(0.0, 1.0, self.grid_points)
    }
}

/// Seed for replication `index`: a ChaCha8 stream keyed by the base seed with
/// the replication index as stream number.
pub fn replication_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Draws one dataset from the configured design. Deterministic in `rep_seed`.
pub fn gen_dataset(config: &SimConfig, rep_seed: u64) -> FunctionalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let n = config.n;
    let bern = Bernoulli::new(0.5).expect("valid probability");
    let mut cov = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let x1 = if bern.sample(&mut rng) { 1.0 } else { 0.0 };
        let x2: f64 = rng.random();
        cov.extend_from_slice(&[1.0, x1, x2]);
    }
    let covariates = DMatrix::from_row_slice(n, 3, &cov);
    let t_grid = config.t_grid();
    let mut responses = Vec::with_capacity(n * t_grid.len());
    for i in 0..n {
        let x = [cov[3 * i], cov[3 * i + 1], cov[3 * i + 2]];
        for &t in &t_grid {
            let mu = config.coeff_set.mean(&x, t);
            let e = config.error.sample(&mut rng);
            responses.push([mu[0] + e[0], mu[1] + e[1]]);
        }
    }
    FunctionalDataset::new(t_grid, responses, covariates).expect("simulated data is valid")
}

/// Error draws of a simulated dataset recentered at the probe's true mean.
pub fn residual_points(config: &SimConfig, data: &FunctionalDataset) -> Vec<[f64; 2]> {
    let center = config.coeff_set.mean(&config.probe_x(), config.probe_t());
    let cov = data.covariates();
    let mut out = Vec::with_capacity(data.responses().len());
    for i in 0..data.n_subjects() {
        let x = [cov[(i, 0)], cov[(i, 1)], cov[(i, 2)]];
        for (j, &t) in data.t_grid().iter().enumerate() {
            let y = data.response(i, j);
            let mu = config.coeff_set.mean(&x, t);
            out.push([center[0] + y[0] - mu[0], center[1] + y[1] - mu[1]]);
        }
    }
    out
}

/// Observations whose covariates are within `x_tol` of the probe and whose
/// grid point is within `t_tol` of the probe location.
pub fn points_near_probe(config: &SimConfig, data: &FunctionalDataset, x_tol: f64, t_tol: f64) -> Vec<[f64; 2]> {
    let px = config.probe_x();
    let cov = data.covariates();
    let mut out = Vec::new();
    for i in 0..data.n_subjects() {
        let near = (1..3).all(|k| (cov[(i, k)] - px[k]).abs() <= x_tol);
        if !near {
            continue;
        }
        for (j, &t) in data.t_grid().iter().enumerate() {
            if (t - config.probe_t()).abs() <= t_tol {
                out.push(data.response(i, j));
            }
        }
    }
    out
}

/// `count` responses from the true model at fixed `(x, t)`.
pub fn draw_at(config: &SimConfig, x: &[f64; 3], t: f64, count: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = config.coeff_set.mean(x, t);
    (0..count)
        .map(|_| {
            let e = config.error.sample(&mut rng);
            [mu[0] + e[0], mu[1] + e[1]]
        })
        .collect()
}

/// Empirical directional `τ`-quantiles of a sample.
pub fn sample_directional_quantiles(points: &[[f64; 2]], grid: &DirectionGrid, tau: f64) -> Vec<f64> {
    let mut proj = vec![0.0; points.len()];
    grid.directions()
        .iter()
        .map(|s| {
            for (p, y) in proj.iter_mut().zip(points) {
                *p = s[0] * y[0] + s[1] * y[1];
            }
            empirical_quantile(&mut proj, tau)
        })
        .collect()
}

/// Directional `τ`-quantiles at `(x, t)` estimated from `n_oracle` draws of
/// the true model.
pub fn oracle_quantiles(
    config: &SimConfig,
    grid: &DirectionGrid,
    x: &[f64; 3],
    t: f64,
    tau: f64,
    n_oracle: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    validate_tau(tau)?;
    if n_oracle == 0 {
        return Err(Error::invalid("oracle sample size must be positive"));
    }
    let draws = draw_at(config, x, t, n_oracle, seed);
    Ok(sample_directional_quantiles(&draws, grid, tau))
}

/// Elliptical error families with closed-form envelope coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyticDist {
    Gaussian,
    T3,
}

impl TryFrom<ErrorDist> for AnalyticDist {
    type Error = Error;

    fn try_from(e: ErrorDist) -> Result<Self> {
        match e {
            ErrorDist::I => Ok(AnalyticDist::Gaussian),
            ErrorDist::II => Ok(AnalyticDist::T3),
            ErrorDist::III => Err(Error::invalid("error law III has no closed-form coverage")),
        }
    }
}

/// Upper `τ` point of the standardized marginal.
pub fn marginal_upper_point(dist: AnalyticDist, tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    Ok(match dist {
        AnalyticDist::Gaussian => Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - tau),
        AnalyticDist::T3 => StudentsT::new(0.0, 1.0, 3.0).expect("t3").inverse_cdf(1.0 - tau),
    })
}

/// Population probability mass inside the limiting (circular) envelope of a
/// spherical law at level `τ`.
pub fn analytic_coverage(dist: AnalyticDist, tau: f64) -> Result<f64> {
    let z = marginal_upper_point(dist, tau)?;
    Ok(match dist {
        AnalyticDist::Gaussian => 1.0 - (-0.5 * z * z).exp(),
        AnalyticDist::T3 => 1.0 - (1.0 + z * z / 3.0).powf(-1.5),
    })
}

/// Exact directional quantiles of the spherical error laws at `(x, t)`:
/// `q(s) = sᵀμ − z σ`.
pub fn exact_quantiles(config: &SimConfig, grid: &DirectionGrid, x: &[f64; 3], t: f64, tau: f64) -> Result<Vec<f64>> {
    let dist = AnalyticDist::try_from(config.error)?;
    let z = marginal_upper_point(dist, tau)?;
    let scale = match dist {
        AnalyticDist::Gaussian => 0.8f64.sqrt(),
        AnalyticDist::T3 => 0.8f64.powi(5).sqrt(),
    };
    let mu = config.coeff_set.mean(x, t);
    Ok(grid.directions().iter().map(|s| s[0] * mu[0] + s[1] * mu[1] - z * scale).collect())
}
