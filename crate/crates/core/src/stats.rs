//! Distribution helpers: chi-square upper quantiles and empirical quantiles.

use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// The `u`-th upper quantile of χ²_df: the `x` with `P(χ²_df > x) = u`.
///
/// Solved by bisection on the regularized upper incomplete gamma function.
pub fn chi2_upper_quantile(df: usize, u: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::invalid("chi-square degrees of freedom must be positive"));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("upper tail probability {u} not in (0, 1)")));
    }
    let a = df as f64 / 2.0;
    let survival = |x: f64| gamma_ur(a, x / 2.0);
    let mut hi = df as f64 + 10.0;
    while survival(hi) > u {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if survival(mid) > u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `inf{u : F_n(u) ≥ τ}` over the sample.
pub fn empirical_quantile(values: &mut [f64], tau: f64) -> f64 {
    assert!(!values.is_empty(), "empirical quantile of an empty sample");
    values.sort_by(|a, b| a.total_cmp(b));
    let k = ((tau * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[k - 1]
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
