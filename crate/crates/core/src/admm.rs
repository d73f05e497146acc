//! ADMM for `min_b Σ ρ_τ(y − Xb) + λ bᵀΩb`.
//!
//! The problem is split as `ρ_τ(r) + λ bᵀΩb` subject to `r + Xb = y` and
//! iterated in scaled form:
//!
//! ```text
//! r ← prox_{ρ_τ/ρ}(y − Xb − u)
//! b ← (2λΩ/ρ + XᵀX)⁻¹ Xᵀ(y − r − u)
//! u ← u + r + Xb − y
//! ```
//!
//! The linear system is factorized once per `(X, λ, Ω, ρ)` and reused for any
//! number of response vectors.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::loss::{prox, total_loss, validate_tau};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmOptions {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Use `ε^dual = √N ε_abs + ε_rel ‖u‖` (no `ρ` factor) instead of the
    /// scaled-form `ε_rel ρ ‖u‖`.
    pub unscaled_dual_tolerance: bool,
    /// Record per-iteration residuals and objective.
    pub trace: bool,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions {
            rho: 1.2,
            eps_abs: 1e-4,
            eps_rel: 1e-2,
            max_iters: 5000,
            unscaled_dual_tolerance: false,
            trace: false,
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0 && self.eps_abs > 0.0 && self.eps_rel > 0.0 && self.max_iters >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("admm: rho, eps_abs, eps_rel must be positive and max_iters >= 1".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

/// Writes `iteration,r_pri,r_dual,objective` rows.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "r_pri", "r_dual", "objective"])?;
    for row in rows {
        w.write_record(&[
            row.iteration.to_string(),
            row.primal_residual.to_string(),
            row.dual_residual.to_string(),
            row.objective.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub b: DVector<f64>,
    /// `X b` at exit.
    pub fitted: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
}

/// `Σ ρ_τ(y − Xb) + λ bᵀΩb`.
pub fn penalized_objective<D: Design>(
    x: &D,
    y: &DVector<f64>,
    b: &DVector<f64>,
    tau: f64,
    lambda: f64,
    omega: &DMatrix<f64>,
) -> f64 {
    let mut xb = DVector::zeros(x.nrows());
    x.apply(b, &mut xb);
    objective_from_fit(y, &xb, b, tau, lambda, omega)
}

fn objective_from_fit(
    y: &DVector<f64>,
    xb: &DVector<f64>,
    b: &DVector<f64>,
    tau: f64,
    lambda: f64,
    omega: &DMatrix<f64>,
) -> f64 {
    let loss = total_loss(y.iter().zip(xb.iter()).map(|(y, f)| y - f), tau);
    let pen = if lambda == 0.0 { 0.0 } else { lambda * (omega * b).dot(b) };
    loss + pen
}

/// A factorized penalized quantile regression system, reusable across responses.
pub struct PqrSolver<'a, D: Design> {
    design: &'a D,
    omega: &'a DMatrix<f64>,
    lambda: f64,
    opts: AdmmOptions,
    factor: Cholesky<f64, Dyn>,
}

impl<'a, D: Design> PqrSolver<'a, D> {
    pub fn new(design: &'a D, lambda: f64, omega: &'a DMatrix<f64>, opts: &AdmmOptions) -> Result<Self> {
        opts.validate()?;
        let k = design.ncols();
        if design.nrows() == 0 || k == 0 {
            return Err(Error::invalid("design must have at least one row and one column"));
        }
        if omega.shape() != (k, k) {
            return Err(Error::invalid(format!(
                "penalty is {}x{}, design has {k} columns",
                omega.nrows(),
                omega.ncols()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda = {lambda} must be finite and nonnegative")));
        }
        let mut system = design.gram();
        if lambda > 0.0 {
            system += omega * (2.0 * lambda / opts.rho);
        }
        let factor = match Cholesky::new(system.clone()) {
            Some(f) => f,
            None => {
                let jitter = 1e-10 * system.trace() / k as f64;
                let mut ridged = system;
                for i in 0..k {
                    ridged[(i, i)] += jitter.max(f64::MIN_POSITIVE);
                }
                Cholesky::new(ridged)
                    .ok_or_else(|| Error::Numerical("normal equations singular even after ridge jitter".into()))?
            }
        };
        Ok(PqrSolver { design, omega, lambda, opts: opts.clone(), factor })
    }

    pub fn design(&self) -> &D {
        self.design
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn solve(&self, y: &DVector<f64>, tau: f64) -> Result<AdmmResult> {
        validate_tau(tau)?;
        let x = self.design;
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::invalid(format!("response has {} entries, design has {n} rows", y.len())));
        }
        let rho = self.opts.rho;
        let sqrt_n = (n as f64).sqrt();
        let y_norm = y.norm();

        let mut b = DVector::zeros(x.ncols());
        let mut r = y.clone();
        let mut u = DVector::<f64>::zeros(n);
        let mut xb = DVector::<f64>::zeros(n);
        let mut xb_prev = DVector::<f64>::zeros(n);
        let mut work = DVector::<f64>::zeros(n);
        let mut trace = Vec::new();

        let mut primal = f64::INFINITY;
        let mut dual = f64::INFINITY;
        let mut eps_pri = 0.0;
        let mut eps_dual = 0.0;
        let mut converged = false;
        let mut iterations = 0;

        for k in 1..=self.opts.max_iters {
            iterations = k;
            for i in 0..n {
                r[i] = prox(y[i] - xb[i] - u[i], tau, rho, 1.0);
                work[i] = y[i] - r[i] - u[i];
            }
            let mut rhs = DVector::zeros(x.ncols());
            x.apply_transpose(&work, &mut rhs);
            b = self.factor.solve(&rhs);
            std::mem::swap(&mut xb, &mut xb_prev);
            x.apply(&b, &mut xb);

            let mut pri_sq = 0.0;
            let mut dual_sq = 0.0;
            for i in 0..n {
                let res = r[i] + xb[i] - y[i];
                u[i] += res;
                pri_sq += res * res;
                let step = xb[i] - xb_prev[i];
                dual_sq += step * step;
            }
            primal = pri_sq.sqrt();
            dual = rho * dual_sq.sqrt();
            eps_pri = sqrt_n * self.opts.eps_abs + self.opts.eps_rel * r.norm().max(xb.norm()).max(y_norm);
            let dual_scale = if self.opts.unscaled_dual_tolerance { 1.0 } else { rho };
            eps_dual = sqrt_n * self.opts.eps_abs + self.opts.eps_rel * dual_scale * u.norm();

            if self.opts.trace {
                trace.push(TraceRow {
                    iteration: k,
                    primal_residual: primal,
                    dual_residual: dual,
                    objective: objective_from_fit(y, &xb, &b, tau, self.lambda, self.omega),
                });
            }
            if primal <= eps_pri && dual <= eps_dual {
                converged = true;
                break;
            }
        }

        let objective = objective_from_fit(y, &xb, &b, tau, self.lambda, self.omega);
        Ok(AdmmResult {
            b,
            fitted: xb,
            iterations,
            converged,
            primal_residual: primal,
            dual_residual: dual,
            eps_primal: eps_pri,
            eps_dual,
            objective,
            trace,
        })
    }
}

/// One-shot solve of `min_b Σ ρ_τ(y − Xb) + λ bᵀΩb`.
pub fn solve_pqr<D: Design>(
    x: &D,
    y: &DVector<f64>,
    tau: f64,
    lambda: f64,
    omega: &DMatrix<f64>,
    opts: &AdmmOptions,
) -> Result<AdmmResult> {
    PqrSolver::new(x, lambda, omega, opts)?.solve(y, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_median() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let omega = DMatrix::zeros(1, 1);
        let opts = AdmmOptions { eps_abs: 1e-8, eps_rel: 1e-8, ..Default::default() };
        let res = solve_pqr(&x, &y, 0.5, 0.0, &omega, &opts).unwrap();
        assert!(res.converged);
        assert_abs_diff_eq!(res.b[0], 3.0, epsilon = 1e-4);
    }

    #[test]
    fn default_tolerance_median() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let res = solve_pqr(&x, &y, 0.5, 0.0, &DMatrix::zeros(1, 1), &AdmmOptions::default()).unwrap();
        assert!(res.converged);
        assert!((res.b[0] - 3.0).abs() < 0.2, "{}", res.b[0]);
        assert!(res.primal_residual <= res.eps_primal);
        assert!(res.dual_residual <= res.eps_dual);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let x = DMatrix::from_element(3, 2, 1.0);
        let y = DVector::zeros(3);
        let opts = AdmmOptions::default();
        assert!(solve_pqr(&x, &y, 0.5, 0.0, &DMatrix::zeros(3, 3), &opts).is_err());
        assert!(solve_pqr(&x, &DVector::zeros(2), 0.5, 0.0, &DMatrix::zeros(2, 2), &opts).is_err());
        assert!(solve_pqr(&x, &y, 1.5, 0.0, &DMatrix::zeros(2, 2), &opts).is_err());
        assert!(solve_pqr(&x, &y, 0.5, -1.0, &DMatrix::zeros(2, 2), &opts).is_err());
    }

    #[test]
    fn rank_deficient_design_gets_jitter() {
        // Duplicate columns: XᵀX is singular.
        let x = DMatrix::from_element(4, 2, 1.0);
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0]);
        let res = solve_pqr(&x, &y, 0.5, 0.0, &DMatrix::zeros(2, 2), &AdmmOptions::default()).unwrap();
        assert!(res.b.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn max_iters_reports_unconverged() {
        let x = DMatrix::from_fn(30, 2, |i, k| if k == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(30, |i, _| (i as f64).sin() * 5.0);
        let opts = AdmmOptions { max_iters: 2, eps_abs: 1e-12, eps_rel: 1e-12, trace: true, ..Default::default() };
        let res = solve_pqr(&x, &y, 0.3, 0.0, &DMatrix::zeros(2, 2), &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 2);
        assert_eq!(res.trace.len(), 2);
        let mut buf = Vec::new();
        write_trace_csv(&res.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,r_pri,r_dual,objective\n1,"));
    }
}
