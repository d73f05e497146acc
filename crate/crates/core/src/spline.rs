//! Clamped B-spline bases on `[0, 1]` and their second-derivative roughness penalty.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A clamped B-spline basis together with its roughness penalty matrix.
///
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    degree: usize,
    interior_knots: Vec<f64>,
    full_knots: Vec<f64>,
    omega: DMatrix<f64>,
}

impl SplineBasis {
    /// Builds a basis of the given degree with the given strictly increasing
    /// interior knots in `(0, 1)`. Boundary knots 0 and 1 get multiplicity
    /// `degree + 1`.
    pub fn new(degree: usize, interior_knots: &[f64]) -> Result<Self> {
        for (i, &k) in interior_knots.iter().enumerate() {
            if !k.is_finite() || k <= 0.0 || k >= 1.0 {
                return Err(Error::invalid(format!("interior knot {i} = {k} lies outside (0, 1)")));
            }
            if i > 0 && k <= interior_knots[i - 1] {
                return Err(Error::invalid(format!("interior knots must be strictly increasing (knot {i} = {k})")));
            }
        }
        let mut full_knots = Vec::with_capacity(interior_knots.len() + 2 * (degree + 1));
        full_knots.extend(std::iter::repeat_n(0.0, degree + 1));
        full_knots.extend_from_slice(interior_knots);
        full_knots.extend(std::iter::repeat_n(1.0, degree + 1));

        let mut basis =
            SplineBasis { degree, interior_knots: interior_knots.to_vec(), full_knots, omega: DMatrix::zeros(0, 0) };
        basis.omega = basis.compute_penalty();
        Ok(basis)
    }

    /// `count` interior knots spread evenly over `[lo, hi]`, endpoints included.
    pub fn evenly_spaced(degree: usize, count: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(degree, &linspace(lo, hi, count))
    }

    /// Cubic basis with 14 evenly spaced knots over `[.02, .93]`, the layout used
    /// by the simulation study.
    pub fn reproduction_default() -> Self {
        Self::evenly_spaced(3, 14, 0.02, 0.93).expect("reproduction knots are valid")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn full_knots(&self) -> &[f64] {
        &self.full_knots
    }

    /// Basis dimension M.
    pub fn dim(&self) -> usize {
        self.interior_knots.len() + self.degree + 1
    }

    /// The roughness penalty `Ω = ∫ H''(t) H''(t)ᵀ dt`.
    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// `I_p ⊗ Ω`: the penalty on a stacked coefficient vector of `p` functions.
    pub fn block_penalty(&self, p: usize) -> DMatrix<f64> {
        DMatrix::<f64>::identity(p, p).kronecker(&self.omega)
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec { degree: self.degree, knots: Some(self.interior_knots.clone()), knot_count: None, knot_range: None }
    }

    /// Evaluates all M basis functions at `t`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        self.eval_derivative(t, 0)
    }

    /// Evaluates the `order`-th derivative of every basis function at `t`.
    ///
    /// At knots the derivative is taken from the right, except at `t = 1`
    /// where the left limit is used.
    pub fn eval_derivative(&self, t: f64, order: usize) -> Result<DVector<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
        }
        let span = self.find_span(t);
        Ok(DVector::from_vec(self.derivative_at_span(t, span, order)))
    }

    /// Evaluates the basis at each point of `ts`, one row per point.
    pub fn eval_matrix(&self, ts: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.dim();
        let mut out = DMatrix::zeros(ts.len(), m);
        for (j, &t) in ts.iter().enumerate() {
            let row = self.eval(t)?;
            for k in 0..m {
                out[(j, k)] = row[k];
            }
        }
        Ok(out)
    }

    // Index mu with knots[mu] <= t < knots[mu + 1]; t = 1 maps to the last nonempty span.
    fn find_span(&self, t: f64) -> usize {
        let k = &self.full_knots;
        let last = k.len() - self.degree - 2;
        if t >= 1.0 {
            return last;
        }
        let mut mu = self.degree;
        while mu < last && k[mu + 1] <= t {
            mu += 1;
        }
        mu
    }

    // Table of all B-spline values of degree 0..=degree at t, given the span.
    // table[q][i] = N_{i,q}(t) for i in 0..(knots.len() - q - 1).
    fn value_table(&self, t: f64, span: usize) -> Vec<Vec<f64>> {
        let k = &self.full_knots;
        let mut table = Vec::with_capacity(self.degree + 1);
        let mut level = vec![0.0; k.len() - 1];
        level[span] = 1.0;
        table.push(level);
        for q in 1..=self.degree {
            let prev = &table[q - 1];
            let count = k.len() - q - 1;
            let mut level = vec![0.0; count];
            for (i, slot) in level.iter_mut().enumerate() {
                let mut v = 0.0;
                let left = k[i + q] - k[i];
                if left > 0.0 {
                    v += (t - k[i]) / left * prev[i];
                }
                let right = k[i + q + 1] - k[i + 1];
                if right > 0.0 {
                    v += (k[i + q + 1] - t) / right * prev[i + 1];
                }
                *slot = v;
            }
            table.push(level);
        }
        table
    }

    fn derivative_at_span(&self, t: f64, span: usize, order: usize) -> Vec<f64> {
        let m = self.dim();
        if order > self.degree {
            return vec![0.0; m];
        }
        let table = self.value_table(t, span);
        (0..m).map(|i| self.derivative_entry(&table, i, self.degree, order)).collect()
    }

    fn derivative_entry(&self, table: &[Vec<f64>], i: usize, q: usize, order: usize) -> f64 {
        if order == 0 {
            return table[q][i];
        }
        let k = &self.full_knots;
        let qf = q as f64;
        let mut v = 0.0;
        let left = k[i + q] - k[i];
        if left > 0.0 {
            v += qf / left * self.derivative_entry(table, i, q - 1, order - 1);
        }
        let right = k[i + q + 1] - k[i + 1];
        if right > 0.0 {
            v -= qf / right * self.derivative_entry(table, i + 1, q - 1, order - 1);
        }
        v
    }

    fn compute_penalty(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut omega = DMatrix::zeros(m, m);
        if self.degree < 2 {
            return omega;
        }
        let points = (2 * (self.degree - 2) + 1).div_ceil(2);
        let (nodes, weights) = gauss_legendre(points);
        let k = &self.full_knots;
        for span in self.degree..(k.len() - self.degree - 1) {
            let (a, b) = (k[span], k[span + 1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (x, w) in nodes.iter().zip(&weights) {
                let t = mid + half * x;
                let d2 = DVector::from_vec(self.derivative_at_span(t, span, 2));
                omega += (w * half) * &d2 * d2.transpose();
            }
        }
        // Symmetrize away rounding.
        let sym = 0.5 * (&omega + omega.transpose());
        sym
    }
}

/// Serializable basis description used by run configurations and artifacts.
///
/// Either `knots` lists the interior knots explicitly, or `knot_count` evenly
/// spaced knots are placed over `knot_range` (inclusive). Without a range the
/// knots split `[0, 1]` into `knot_count + 1` equal intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knot_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knot_range: Option<[f64; 2]>,
}

fn default_degree() -> usize {
    3
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec { degree: 3, knots: None, knot_count: Some(14), knot_range: None }
    }
}

impl BasisSpec {
    pub fn reproduction() -> Self {
        BasisSpec { degree: 3, knots: None, knot_count: Some(14), knot_range: Some([0.02, 0.93]) }
    }

    pub fn interior_knots(&self) -> Result<Vec<f64>> {
        match (&self.knots, self.knot_count) {
            (Some(_), Some(_)) => Err(Error::Config("basis: give either `knots` or `knot_count`, not both".into())),
            (Some(k), None) => {
                if self.knot_range.is_some() {
                    return Err(Error::Config("basis: `knot_range` only applies with `knot_count`".into()));
                }
                Ok(k.clone())
            }
            (None, Some(count)) => Ok(match self.knot_range {
                Some([lo, hi]) => linspace(lo, hi, count),
                None => (1..=count).map(|i| i as f64 / (count + 1) as f64).collect(),
            }),
            (None, None) => Ok(Vec::new()),
        }
    }

    pub fn build(&self) -> Result<SplineBasis> {
        SplineBasis::new(self.degree, &self.interior_knots()?)
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dimensions() {
        assert_eq!(SplineBasis::reproduction_default().dim(), 18);
        assert_eq!(SplineBasis::new(3, &[]).unwrap().dim(), 4);
        assert_eq!(SplineBasis::new(0, &[]).unwrap().dim(), 1);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(SplineBasis::new(3, &[0.5, 0.4]).is_err());
        assert!(SplineBasis::new(3, &[0.5, 0.5]).is_err());
        assert!(SplineBasis::new(3, &[0.0]).is_err());
        assert!(SplineBasis::new(3, &[1.2]).is_err());
    }

    #[test]
    fn eval_rejects_out_of_domain() {
        let b = SplineBasis::new(3, &[0.5]).unwrap();
        assert!(matches!(b.eval(1.01), Err(Error::Domain(_))));
        assert!(matches!(b.eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn clamped_endpoints() {
        let b = SplineBasis::reproduction_default();
        let h0 = b.eval(0.0).unwrap();
        assert_eq!(h0[0], 1.0);
        assert!(h0.iter().skip(1).all(|&v| v == 0.0));
        let h1 = b.eval(1.0).unwrap();
        assert_abs_diff_eq!(h1[b.dim() - 1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn degree_zero_is_indicator() {
        let b = SplineBasis::new(0, &[]).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(b.eval(t).unwrap()[0], 1.0);
        }
        assert_eq!(b.omega()[(0, 0)], 0.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..6 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert_abs_diff_eq!(q, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn spec_round_trip() {
        let spec = BasisSpec::reproduction();
        let b = spec.build().unwrap();
        assert_eq!(b.dim(), 18);
        let again = b.spec().build().unwrap();
        assert_eq!(again.full_knots(), b.full_knots());
        let both = BasisSpec { knots: Some(vec![0.5]), ..BasisSpec::default() };
        assert!(both.build().is_err());
    }

    #[test]
    fn default_spec_spreads_over_unit_interval() {
        let k = BasisSpec { knot_count: Some(3), ..BasisSpec::default() }.interior_knots().unwrap();
        assert_eq!(k, vec![0.25, 0.5, 0.75]);
    }
}
