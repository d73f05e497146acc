//! Linear design operators for the penalized check-loss problem.
//!
//! Coefficient vectors `B` of length `pM` hold the `p × M` coefficient matrix
//! `C` with the basis index fastest: `B[k * M + m] = C[k, m]`. The design row
//! for subject `i` at grid point `j` is then `kron(x_i, H(t_j))`.

use nalgebra::{DMatrix, DVector};

use crate::data::FunctionalDataset;
use crate::error::Result;
use crate::spline::SplineBasis;

/// A linear map `b ↦ X b` with its adjoint and Gram matrix.
pub trait Design: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out ← X b`
    fn apply(&self, b: &DVector<f64>, out: &mut DVector<f64>);
    /// `out ← Xᵀ v`
    fn apply_transpose(&self, v: &DVector<f64>, out: &mut DVector<f64>);
    /// `XᵀX`
    fn gram(&self) -> DMatrix<f64>;
}

impl Design for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, b: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, self, b, 0.0);
    }

    fn apply_transpose(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv_tr(1.0, self, v, 0.0);
    }

    fn gram(&self) -> DMatrix<f64> {
        self.tr_mul(self)
    }
}

/// Dense `(nJ) × (pM)` design with row `i * J + j` equal to `kron(x_i, H(t_j))`.
pub fn design_matrix(data: &FunctionalDataset, basis: &SplineBasis) -> Result<DMatrix<f64>> {
    let h = basis.eval_matrix(data.t_grid())?;
    Ok(KronDesign::new(data.covariates().clone(), h).to_dense())
}

/// The same design stored in factored form: covariates (`n × p`) and basis
/// values on the grid (`J × M`). Products cost `O(nJp + JMp)` instead of
/// `O(nJpM)`.
#[derive(Debug, Clone)]
pub struct KronDesign {
    covariates: DMatrix<f64>,
    basis_values: DMatrix<f64>,
}

impl KronDesign {
    pub fn new(covariates: DMatrix<f64>, basis_values: DMatrix<f64>) -> Self {
        KronDesign { covariates, basis_values }
    }

    pub fn from_data(data: &FunctionalDataset, basis: &SplineBasis) -> Result<Self> {
        Ok(Self::new(data.covariates().clone(), basis.eval_matrix(data.t_grid())?))
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn basis_values(&self) -> &DMatrix<f64> {
        &self.basis_values
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, p) = self.covariates.shape();
        let (j, m) = self.basis_values.shape();
        DMatrix::from_fn(n * j, p * m, |row, col| {
            let (i, jj) = (row / j, row % j);
            let (k, mm) = (col / m, col % m);
            self.covariates[(i, k)] * self.basis_values[(jj, mm)]
        })
    }
}

impl Design for KronDesign {
    fn nrows(&self) -> usize {
        self.covariates.nrows() * self.basis_values.nrows()
    }

    fn ncols(&self) -> usize {
        self.covariates.ncols() * self.basis_values.ncols()
    }

    fn apply(&self, b: &DVector<f64>, out: &mut DVector<f64>) {
        let (n, p) = self.covariates.shape();
        let (j, m) = self.basis_values.shape();
        // Column-major M × p view of b is Cᵀ.
        let ct = DMatrix::from_column_slice(m, p, b.as_slice());
        let fitted_by_grid = &self.basis_values * ct; // J × p
        let fitted = fitted_by_grid * self.covariates.transpose(); // J × n
        debug_assert_eq!(fitted.len(), n * j);
        out.as_mut_slice().copy_from_slice(fitted.as_slice());
    }

    fn apply_transpose(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        let (n, p) = self.covariates.shape();
        let (j, m) = self.basis_values.shape();
        let by_grid = DMatrix::from_column_slice(j, n, v.as_slice());
        let a = by_grid * &self.covariates; // J × p
        let g = self.basis_values.tr_mul(&a); // M × p
        debug_assert_eq!(g.len(), p * m);
        out.as_mut_slice().copy_from_slice(g.as_slice());
    }

    fn gram(&self) -> DMatrix<f64> {
        self.covariates.tr_mul(&self.covariates).kronecker(&self.basis_values.tr_mul(&self.basis_values))
    }
}

/// Row blocks `w_1 X, …, w_R X` of a shared design, used for weighted fits
/// across several directions (`w ρ_τ(u) = ρ_τ(w u)` for `w > 0`).
#[derive(Debug, Clone)]
pub struct StackedDesign<'a, D: Design> {
    inner: &'a D,
    weights: Vec<f64>,
}

impl<'a, D: Design> StackedDesign<'a, D> {
    pub fn new(inner: &'a D, weights: Vec<f64>) -> Self {
        StackedDesign { inner, weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl<D: Design> Design for StackedDesign<'_, D> {
    fn nrows(&self) -> usize {
        self.inner.nrows() * self.weights.len()
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, b: &DVector<f64>, out: &mut DVector<f64>) {
        let rows = self.inner.nrows();
        let mut base = DVector::zeros(rows);
        self.inner.apply(b, &mut base);
        for (blk, &w) in self.weights.iter().enumerate() {
            let dst = &mut out.as_mut_slice()[blk * rows..(blk + 1) * rows];
            for (o, v) in dst.iter_mut().zip(base.iter()) {
                *o = w * v;
            }
        }
    }

    fn apply_transpose(&self, v: &DVector<f64>, out: &mut DVector<f64>) {
        let rows = self.inner.nrows();
        let mut folded = DVector::zeros(rows);
        for (blk, &w) in self.weights.iter().enumerate() {
            let src = &v.as_slice()[blk * rows..(blk + 1) * rows];
            for (f, s) in folded.iter_mut().zip(src) {
                *f += w * s;
            }
        }
        self.inner.apply_transpose(&folded, out);
    }

    fn gram(&self) -> DMatrix<f64> {
        let scale: f64 = self.weights.iter().map(|w| w * w).sum();
        self.inner.gram() * scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kronecker_row_layout() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let h = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let dense = KronDesign::new(x, h).to_dense();
        assert_eq!(dense.row(0).iter().copied().collect::<Vec<_>>(), vec![0.3, 0.7, 0.6, 1.4]);
    }

    #[test]
    fn intercept_only_rows_are_basis_values() {
        let basis = SplineBasis::new(3, &[0.5]).unwrap();
        let t = vec![0.0, 0.25, 0.9];
        let data = FunctionalDataset::new(t.clone(), vec![[0.0; 2]; 6], DMatrix::from_element(2, 1, 1.0)).unwrap();
        let dense = design_matrix(&data, &basis).unwrap();
        for i in 0..2 {
            for (j, &tj) in t.iter().enumerate() {
                let h = basis.eval(tj).unwrap();
                for m in 0..basis.dim() {
                    assert_eq!(dense[(i * 3 + j, m)], h[m]);
                }
            }
        }
    }

    #[test]
    fn factored_matches_dense() {
        let cov = DMatrix::from_fn(4, 3, |i, k| if k == 0 { 1.0 } else { (i * 7 + k * 3) as f64 / 11.0 });
        let h = DMatrix::from_fn(5, 4, |j, m| ((j + 1) * (m + 2)) as f64 / 13.0);
        let kron = KronDesign::new(cov, h);
        let dense = kron.to_dense();
        let b = DVector::from_fn(12, |i, _| (i as f64 * 0.37).sin());
        let v = DVector::from_fn(20, |i, _| (i as f64 * 0.11).cos());
        let mut a = DVector::zeros(20);
        kron.apply(&b, &mut a);
        assert_abs_diff_eq!((a - &dense * &b).norm(), 0.0, epsilon = 1e-12);
        let mut at = DVector::zeros(12);
        kron.apply_transpose(&v, &mut at);
        assert_abs_diff_eq!((at - dense.transpose() * &v).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((kron.gram() - dense.gram()).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stacked_blocks_scale_rows() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let st = StackedDesign::new(&x, vec![1.0, 0.5]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let mut out = DVector::zeros(4);
        st.apply(&b, &mut out);
        assert_eq!(out.as_slice(), &[-1.0, -1.0, -0.5, -0.5]);
        let mut back = DVector::zeros(2);
        st.apply_transpose(&DVector::from_vec(vec![1.0, 0.0, 0.0, 2.0]), &mut back);
        assert_eq!(back.as_slice(), &[1.0 + 3.0, 2.0 + 4.0]);
        assert_abs_diff_eq!((st.gram() - x.gram() * 1.25).norm(), 0.0, epsilon = 1e-12);
    }
}
