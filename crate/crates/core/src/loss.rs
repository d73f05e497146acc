//! Check loss and its proximal operator.

use crate::error::{Error, Result};

pub(crate) fn validate_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("quantile level tau = {tau} not in (0, 1)")))
    }
}

/// `ρ_τ(u) = u (τ − 1[u < 0])`.
pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    Ok(rho(u, tau))
}

#[inline]
pub(crate) fn rho(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Sum of check losses over residuals.
pub(crate) fn total_loss(residuals: impl IntoIterator<Item = f64>, tau: f64) -> f64 {
    residuals.into_iter().map(|u| rho(u, tau)).sum()
}

/// `S_a(v) = (v − a)₊ − (−v − a)₊`.
#[inline]
pub fn soft_threshold(v: f64, a: f64) -> f64 {
    (v - a).max(0.0) - (-v - a).max(0.0)
}

/// `argmin_r w·ρ_τ(r) + (ρ/2)(r − v)²`.
pub fn check_prox(v: f64, tau: f64, rho: f64, w: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("penalty rho = {rho} must be positive")));
    }
    if !(w > 0.0) {
        return Err(Error::invalid(format!("weight w = {w} must be positive")));
    }
    validate_tau(tau)?;
    Ok(prox(v, tau, rho, w))
}

#[inline]
pub(crate) fn prox(v: f64, tau: f64, rho: f64, w: f64) -> f64 {
    let scale = w / (2.0 * rho);
    soft_threshold(v - scale * (2.0 * tau - 1.0), scale)
}
