//! Monte Carlo replications of the simulation study and their summary tables.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::AdmmOptions;
use crate::data::DirectionGrid;
use crate::envelope::{build_envelope, coverage, curvature, directional_quantiles};
use crate::error::{Error, Result};
use crate::ps::{run_multistage, select_lambda, ProjectedProblem, PsOptions};
use crate::sim::{
    draw_at, gen_dataset, oracle_quantiles, points_near_probe, replication_seed, residual_points, CoeffSet,
    CoverageTarget, ErrorDist, SimConfig,
};
use crate::spline::SplineBasis;
use crate::stats::{mean, sample_sd};

/// Curvature and coverage of one envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeMetrics {
    pub kappa: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub tau: f64,
    pub lambda: f64,
    pub initial: EnvelopeMetrics,
    pub updated: EnvelopeMetrics,
}

fn metrics(grid: &DirectionGrid, q: &[f64], points: &[[f64; 2]]) -> Result<EnvelopeMetrics> {
    let env = build_envelope(grid, q)?;
    Ok(EnvelopeMetrics { kappa: curvature(&env)?, nu: coverage(grid, q, points)? })
}

/// Oracle truth at the probe: envelope from `oracle_draws` model draws, with
/// coverage measured on the same draws.
pub fn oracle_metrics(config: &SimConfig, grid: &DirectionGrid, tau: f64) -> Result<EnvelopeMetrics> {
    let seed = replication_seed(config.seed, u64::MAX);
    let x = config.probe_x();
    let t = config.probe_t();
    let q = oracle_quantiles(config, grid, &x, t, tau, config.oracle_draws, seed)?;
    let draws = draw_at(config, &x, t, config.oracle_draws, seed);
    metrics(grid, &q, &draws)
}

/// One replication: fresh data, then initial and updated envelopes at the
/// probe for every quantile level.
pub fn run_replication(
    config: &SimConfig,
    basis: &SplineBasis,
    ps: &PsOptions,
    admm: &AdmmOptions,
    index: usize,
) -> Result<Vec<ReplicationResult>> {
    let data = gen_dataset(config, replication_seed(config.seed, index as u64));
    let grid = DirectionGrid::new(config.directions)?;
    let problem = ProjectedProblem::new(&data, basis, &grid)?;
    let points = match config.coverage {
        CoverageTarget::Residual => residual_points(config, &data),
        CoverageTarget::NearProbe { x_tol, t_tol } => points_near_probe(config, &data, x_tol, t_tol),
    };
    let x = config.probe_x();
    let t = config.probe_t();
    config
        .tau_levels
        .iter()
        .map(|&tau| {
            let lambda = match ps.lambda {
                Some(l) => l,
                None => select_lambda(&data, basis, &grid, tau, ps, admm)?,
            };
            let fit = run_multistage(&problem, tau, lambda, ps, admm)?;
            let q0 = directional_quantiles(&fit.initial, basis, &x, t)?;
            let q1 = directional_quantiles(&fit.updated, basis, &x, t)?;
            Ok(ReplicationResult {
                replication: index,
                tau,
                lambda,
                initial: metrics(&grid, &q0, &points)?,
                updated: metrics(&grid, &q1, &points)?,
            })
        })
        .collect()
}

/// Summary of one metric at one quantile level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub coeff_set: CoeffSet,
    pub error: ErrorDist,
    pub tau: f64,
    pub metric: Metric,
    pub truth: f64,
    pub initial_mean: f64,
    pub initial_sd: f64,
    pub updated_mean: f64,
    pub updated_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Kappa,
    Nu,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Kappa => "kappa",
            Metric::Nu => "nu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub coeff_set: CoeffSet,
    pub error: ErrorDist,
    pub replications: usize,
    /// Replication indices that failed and were excluded.
    pub failed: Vec<usize>,
    pub rows: Vec<ReportRow>,
    pub results: Vec<ReplicationResult>,
}

impl DesignReport {
    pub fn row(&self, tau: f64, metric: Metric) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.metric == metric && (r.tau - tau).abs() < 1e-12)
    }
}

/// Runs all replications of one design and summarizes them.
pub fn run_replications(
    config: &SimConfig,
    basis: &SplineBasis,
    ps: &PsOptions,
    admm: &AdmmOptions,
) -> Result<DesignReport> {
    config.validate()?;
    ps.validate()?;
    admm.validate()?;
    if config.replications < 2 {
        return Err(Error::Config("sim: at least 2 replications are needed".into()));
    }
    let grid = DirectionGrid::new(config.directions)?;
    let outcomes: Vec<Result<Vec<ReplicationResult>>> =
        (0..config.replications).into_par_iter().map(|i| run_replication(config, basis, ps, admm, i)).collect();
    let mut failed = Vec::new();
    let mut results = Vec::new();
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(r) => results.extend(r),
            Err(_) => failed.push(i),
        }
    }
    let mut rows = Vec::new();
    for &tau in &config.tau_levels {
        let truth = oracle_metrics(config, &grid, tau)?;
        let at_tau: Vec<&ReplicationResult> = results.iter().filter(|r| r.tau == tau).collect();
        for metric in [Metric::Kappa, Metric::Nu] {
            let pick = |m: &EnvelopeMetrics| match metric {
                Metric::Kappa => m.kappa,
                Metric::Nu => m.nu,
            };
            let init: Vec<f64> = at_tau.iter().map(|r| pick(&r.initial)).collect();
            let upd: Vec<f64> = at_tau.iter().map(|r| pick(&r.updated)).collect();
            let summary = |v: &[f64]| if v.is_empty() { (f64::NAN, f64::NAN) } else { (mean(v), sample_sd(v)) };
            let (im, isd) = summary(&init);
            let (um, usd) = summary(&upd);
            rows.push(ReportRow {
                coeff_set: config.coeff_set,
                error: config.error,
                tau,
                metric,
                truth: pick(&truth),
                initial_mean: im,
                initial_sd: isd,
                updated_mean: um,
                updated_sd: usd,
            });
        }
    }
    Ok(DesignReport {
        coeff_set: config.coeff_set,
        error: config.error,
        replications: config.replications,
        failed,
        rows,
        results,
    })
}

/// Writes `coeff_set,error,tau,metric,truth,initial_mean,initial_sd,updated_mean,updated_sd`.
pub fn write_report_csv<W: Write>(reports: &[DesignReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "coeff_set",
        "error",
        "tau",
        "metric",
        "truth",
        "initial_mean",
        "initial_sd",
        "updated_mean",
        "updated_sd",
    ])?;
    for rep in reports {
        for r in &rep.rows {
            w.write_record(&[
                r.coeff_set.label().to_string(),
                r.error.label().to_string(),
                r.tau.to_string(),
                r.metric.label().to_string(),
                format!("{:.6}", r.truth),
                format!("{:.6}", r.initial_mean),
                format!("{:.6}", r.initial_sd),
                format!("{:.6}", r.updated_mean),
                format!("{:.6}", r.updated_sd),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Human-readable table: one block per design, one column group per `τ`.
pub fn format_report_text(reports: &[DesignReport]) -> String {
    let mut s = String::new();
    for rep in reports {
        let taus: Vec<f64> = {
            let mut t: Vec<f64> = rep.rows.iter().map(|r| r.tau).collect();
            t.dedup();
            t
        };
        let _ = writeln!(
            s,
            "coefficients = {}, error = {}, replications = {} ({} failed)",
            rep.coeff_set.label(),
            rep.error.label(),
            rep.replications,
            rep.failed.len()
        );
        let _ = write!(s, "{:<6}", "");
        for tau in &taus {
            let _ = write!(s, "| tau = {:<38}", tau);
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<6}", "");
        for _ in &taus {
            let _ = write!(s, "| {:>8} {:>16} {:>16} ", "true", "initial", "updated");
        }
        let _ = writeln!(s);
        for metric in [Metric::Kappa, Metric::Nu] {
            let _ = write!(s, "{:<6}", metric.label());
            for &tau in &taus {
                if let Some(r) = rep.row(tau, metric) {
                    let _ = write!(
                        s,
                        "| {:>8.3} {:>16} {:>16} ",
                        r.truth,
                        format!("{:.3}({:.3})", r.initial_mean, r.initial_sd),
                        format!("{:.3}({:.3})", r.updated_mean, r.updated_sd)
                    );
                }
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s);
    }
    s
}

/// Pass/fail thresholds checked against a reproduction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Allowed distance of mean estimated coverage from its reference value.
    pub nu_estimate: f64,
    /// Allowed distance of oracle coverage from its reference value.
    pub nu_truth: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { nu_estimate: 0.03, nu_truth: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

// Reference coverages for (coefficients, error, tau): (true, initial, updated).
const REFERENCE_NU: &[(CoeffSet, ErrorDist, f64, f64, f64, f64)] = &[
    (CoeffSet::Smooth, ErrorDist::I, 0.05, 0.740, 0.742, 0.741),
    (CoeffSet::Smooth, ErrorDist::I, 0.10, 0.560, 0.589, 0.575),
    (CoeffSet::Smooth, ErrorDist::I, 0.20, 0.295, 0.298, 0.295),
    (CoeffSet::Smooth, ErrorDist::II, 0.05, 0.790, 0.768, 0.776),
    (CoeffSet::Smooth, ErrorDist::II, 0.10, 0.620, 0.623, 0.621),
];

/// Checks a set of design reports against the reference coverage values and
/// the curvature ordering.
pub fn evaluate_checks(reports: &[DesignReport], tol: &Tolerances) -> Vec<Check> {
    let mut checks = Vec::new();
    for rep in reports {
        let tag = format!("{}/{}", rep.coeff_set.label(), rep.error.label());
        for &(cs, err, tau, truth, init, upd) in REFERENCE_NU {
            if cs != rep.coeff_set || err != rep.error {
                continue;
            }
            let Some(row) = rep.row(tau, Metric::Nu) else { continue };
            let within = |v: f64, r: f64, t: f64| (v - r).abs() <= t;
            checks.push(Check {
                name: format!("{tag} tau={tau} true nu"),
                passed: within(row.truth, truth, tol.nu_truth),
                detail: format!("{:.4} vs {truth} +/- {}", row.truth, tol.nu_truth),
            });
            if (cs, err, tau) == (CoeffSet::Smooth, ErrorDist::I, 0.05) {
                checks.push(Check {
                    name: format!("{tag} tau={tau} initial nu"),
                    passed: within(row.initial_mean, init, tol.nu_estimate),
                    detail: format!("{:.4} vs {init} +/- {}", row.initial_mean, tol.nu_estimate),
                });
                checks.push(Check {
                    name: format!("{tag} tau={tau} updated nu"),
                    passed: within(row.updated_mean, upd, tol.nu_estimate),
                    detail: format!("{:.4} vs {upd} +/- {}", row.updated_mean, tol.nu_estimate),
                });
                checks.push(Check {
                    name: format!("{tag} tau={tau} sd(updated nu) <= sd(initial nu)"),
                    passed: row.updated_sd <= row.initial_sd,
                    detail: format!("{:.4} vs {:.4}", row.updated_sd, row.initial_sd),
                });
                if let Some(k) = rep.row(tau, Metric::Kappa) {
                    checks.push(Check {
                        name: format!("{tag} tau={tau} mean updated kappa <= mean initial kappa"),
                        passed: k.updated_mean <= k.initial_mean,
                        detail: format!("{:.4} vs {:.4}", k.updated_mean, k.initial_mean),
                    });
                }
            }
        }
        let mut truth_kappa: Vec<(f64, f64)> =
            rep.rows.iter().filter(|r| r.metric == Metric::Kappa).map(|r| (r.tau, r.truth)).collect();
        truth_kappa.sort_by(|a, b| a.0.total_cmp(&b.0));
        if truth_kappa.len() >= 2 && matches!(rep.error, ErrorDist::I | ErrorDist::II) {
            let increasing = truth_kappa.windows(2).all(|w| w[0].1 < w[1].1);
            checks.push(Check {
                name: format!("{tag} oracle kappa increases with tau"),
                passed: increasing,
                detail: truth_kappa.iter().map(|(t, k)| format!("{t}:{k:.3}")).collect::<Vec<_>>().join(" "),
            });
        }
    }
    checks
}

pub fn format_checks(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let _ = writeln!(s, "[{}] {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    s
}
