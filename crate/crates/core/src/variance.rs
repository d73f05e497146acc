//! Sandwich variance estimates for penalized quantile regression coefficients.

use nalgebra::{DMatrix, DVector};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::loss::validate_tau;
use crate::stats::{empirical_quantile, sample_sd};

const DENSITY_FLOOR: f64 = 1e-6;
const VARIANCE_FLOOR: f64 = 1e-12;

/// Gaussian-kernel density estimate of the residuals at zero with Silverman's
/// rule-of-thumb bandwidth, floored at `1e-6`.
pub fn residual_density_at_zero(residuals: &[f64]) -> f64 {
    let n = residuals.len();
    if n == 0 {
        return DENSITY_FLOOR;
    }
    let sd = sample_sd(residuals);
    let mut sorted = residuals.to_vec();
    let q1 = empirical_quantile(&mut sorted, 0.25);
    let q3 = empirical_quantile(&mut sorted, 0.75);
    let iqr = (q3 - q1) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if !(h > 0.0) {
        return DENSITY_FLOOR;
    }
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * h * n as f64);
    let f: f64 = residuals
        .iter()
        .map(|e| {
            let z = e / h;
            (-0.5 * z * z).exp()
        })
        .sum::<f64>()
        * norm;
    f.max(DENSITY_FLOOR)
}

/// Diagonal of `τ(1−τ) D⁻¹ G D⁻¹` with `D = f(0) G + 2λΩ`, floored at `1e-12`.
pub fn sandwich_variances(
    gram: &DMatrix<f64>,
    density: f64,
    tau: f64,
    lambda: f64,
    omega: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    validate_tau(tau)?;
    let k = gram.nrows();
    let mut d = gram * density;
    if lambda > 0.0 {
        d += omega * (2.0 * lambda);
    }
    let d_inv = match d.clone().cholesky() {
        Some(c) => c.inverse(),
        None => {
            let jitter = (1e-10 * d.trace() / k as f64).max(f64::MIN_POSITIVE);
            for i in 0..k {
                d[(i, i)] += jitter;
            }
            d.cholesky().ok_or_else(|| Error::Numerical("sandwich bread matrix is singular".into()))?.inverse()
        }
    };
    let left = &d_inv * gram;
    let scale = tau * (1.0 - tau);
    Ok(DVector::from_fn(k, |i, _| {
        let v = scale * left.row(i).dot(&d_inv.column(i).transpose());
        v.max(VARIANCE_FLOOR)
    }))
}

/// Per-coefficient variance estimates for a fit with the given residuals `y − Xb`.
pub fn estimate_variances<D: Design>(
    x: &D,
    residuals: &[f64],
    tau: f64,
    lambda: f64,
    omega: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if residuals.len() != x.nrows() {
        return Err(Error::invalid("residual count does not match design rows"));
    }
    let density = residual_density_at_zero(residuals);
    sandwich_variances(&x.gram(), density, tau, lambda, omega)
}
