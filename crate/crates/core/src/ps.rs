//! Multistage estimation across directions.
//!
//! Stage I fits every direction on its own. Stage II refits each direction on
//! the stacked, weighted problems of its neighbors, with weights that combine
//! angular proximity (`K_loc`) and coefficient similarity (`K_st`). Stage III
//! freezes directions whose refined coefficients drift too far from the
//! reference stage.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmOptions, PqrSolver};
use crate::data::{project_responses, DirectionGrid, FunctionalDataset};
use crate::design::{Design, KronDesign, StackedDesign};
use crate::error::{Error, Result};
use crate::loss::{total_loss, validate_tau};
use crate::spline::SplineBasis;
use crate::stats::chi2_upper_quantile;
use crate::variance::{residual_density_at_zero, sandwich_variances};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsOptions {
    /// Bandwidth growth factor; neighborhoods at stage `c` have chord radius `d₀ hᶜ`.
    pub h: f64,
    /// Maximum number of adaptive stages.
    pub max_stages: usize,
    /// Reference stage for stop checking.
    pub c0: usize,
    /// Exponent in `C_n = n^α χ²₁(.8)`.
    pub alpha: f64,
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    /// Number of probe directions scored during cross-validation.
    pub cv_directions: usize,
    /// Fixed penalty weight; skips cross-validation when set.
    pub lambda: Option<f64>,
    /// Replaces `C_n` when set.
    pub cn_override: Option<f64>,
}

impl Default for PsOptions {
    fn default() -> Self {
        PsOptions {
            h: 1.15,
            max_stages: 5,
            c0: 1,
            alpha: 0.8,
            lambda_grid: vec![0.001, 0.01, 0.1, 1.0],
            cv_folds: 5,
            cv_directions: 8,
            lambda: None,
            cn_override: None,
        }
    }
}

impl PsOptions {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("ps: {m}")));
        if !(self.h > 1.0) {
            return fail("h must exceed 1");
        }
        if self.c0 < 1 {
            return fail("c0 must be at least 1");
        }
        if !(0.3..=1.3).contains(&self.alpha) {
            return fail("alpha must lie in [0.3, 1.3]");
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|&l| !(l > 0.0)) {
            return fail("lambda_grid must be nonempty and positive");
        }
        if self.cv_folds < 2 {
            return fail("cv_folds must be at least 2");
        }
        if self.cv_directions == 0 {
            return fail("cv_directions must be positive");
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return fail("lambda must be nonnegative");
            }
        }
        if let Some(c) = self.cn_override {
            if !(c > 0.0) {
                return fail("cn_override must be positive");
            }
        }
        Ok(())
    }

    /// Similarity scale `C_n`.
    pub fn similarity_scale(&self, n: usize) -> Result<f64> {
        match self.cn_override {
            Some(c) => Ok(c),
            None => Ok((n as f64).powf(self.alpha) * chi2_upper_quantile(1, 0.8)?),
        }
    }
}

/// Per-direction coefficient estimates at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub grid: DirectionGrid,
    pub tau: f64,
    pub lambda: f64,
    /// Row `r` is `B(s_r)`.
    pub coeffs: DMatrix<f64>,
    /// Row `r` holds the component variances of `B(s_r)`.
    pub variances: DMatrix<f64>,
    pub stage: usize,
    pub frozen: Vec<bool>,
}

impl CoefficientField {
    pub fn directions(&self) -> usize {
        self.grid.len()
    }

    pub fn coeff(&self, r: usize) -> DVector<f64> {
        self.coeffs.row(r).transpose()
    }
}

/// Data projected onto every direction of a grid together with the shared
/// design and penalty.
pub struct ProjectedProblem {
    design: KronDesign,
    gram: DMatrix<f64>,
    omega: DMatrix<f64>,
    projections: Vec<DVector<f64>>,
    grid: DirectionGrid,
    subjects: usize,
}

impl ProjectedProblem {
    pub fn new(data: &FunctionalDataset, basis: &SplineBasis, grid: &DirectionGrid) -> Result<Self> {
        let design = KronDesign::from_data(data, basis)?;
        let projections = grid
            .directions()
            .iter()
            .map(|&s| project_responses(data, s).map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProjectedProblem {
            gram: design.gram(),
            omega: basis.block_penalty(data.n_covariates()),
            design,
            projections,
            grid: grid.clone(),
            subjects: data.n_subjects(),
        })
    }

    pub fn design(&self) -> &KronDesign {
        &self.design
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn projection(&self, r: usize) -> &DVector<f64> {
        &self.projections[r]
    }

    pub fn grid(&self) -> &DirectionGrid {
        &self.grid
    }

    pub fn subjects(&self) -> usize {
        self.subjects
    }
}

/// Stage I: independent penalized fits for every direction.
pub fn stage1_fit(problem: &ProjectedProblem, tau: f64, lambda: f64, admm: &AdmmOptions) -> Result<CoefficientField> {
    validate_tau(tau)?;
    let solver = PqrSolver::new(&problem.design, lambda, &problem.omega, admm)?;
    let d = problem.grid.len();
    let rows: Vec<(DVector<f64>, DVector<f64>)> = (0..d)
        .into_par_iter()
        .map(|r| {
            let y = &problem.projections[r];
            let fit = solver.solve(y, tau).map_err(|e| e.at_direction(r))?;
            let resid: Vec<f64> = y.iter().zip(fit.fitted.iter()).map(|(y, f)| y - f).collect();
            let density = residual_density_at_zero(&resid);
            let var = sandwich_variances(&problem.gram, density, tau, lambda, &problem.omega)
                .map_err(|e| e.at_direction(r))?;
            Ok((fit.b, var))
        })
        .collect::<Result<_>>()?;
    let k = problem.design.ncols();
    let mut coeffs = DMatrix::zeros(d, k);
    let mut variances = DMatrix::zeros(d, k);
    for (r, (b, v)) in rows.into_iter().enumerate() {
        coeffs.set_row(r, &b.transpose());
        variances.set_row(r, &v.transpose());
    }
    Ok(CoefficientField {
        grid: problem.grid.clone(),
        tau,
        lambda,
        coeffs,
        variances,
        stage: 0,
        frozen: vec![false; d],
    })
}

/// Propagation-separation weights around direction `center` at stage `c`.
///
/// Returns `(direction, weight)` pairs with positive weight; the center
/// always carries weight 1.
pub fn ps_weights(
    field: &CoefficientField,
    center: usize,
    c: usize,
    n: usize,
    opts: &PsOptions,
) -> Result<Vec<(usize, f64)>> {
    let cn = opts.similarity_scale(n)?;
    let grid = &field.grid;
    let bandwidth = grid.spacing() * opts.h.powi(c as i32);
    let center_coeff = field.coeffs.row(center);
    let center_var = field.variances.row(center);
    let mut out = Vec::new();
    for r in 0..grid.len() {
        if r == center {
            out.push((r, 1.0));
            continue;
        }
        let dist = grid.chord(center, r);
        if dist > bandwidth * (1.0 + 1e-12) {
            continue;
        }
        let k_loc = (1.0 - dist / bandwidth).max(0.0);
        let mahalanobis: f64 = center_coeff
            .iter()
            .zip(field.coeffs.row(r).iter())
            .zip(center_var.iter())
            .map(|((a, b), v)| (a - b) * (a - b) / v)
            .sum();
        let k_st = (2.0 * (1.0 - mahalanobis / cn)).clamp(0.0, 1.0);
        let w = k_loc * k_st;
        if w > 0.0 {
            out.push((r, w));
        }
    }
    Ok(out)
}

/// Stage II: one synchronous adaptive sweep from the stage-`(c − 1)` field.
pub fn stage2_update(
    problem: &ProjectedProblem,
    field: &CoefficientField,
    c: usize,
    opts: &PsOptions,
    admm: &AdmmOptions,
) -> Result<CoefficientField> {
    let d = field.directions();
    let tau = field.tau;
    let lambda = field.lambda;
    let n_rows = problem.design.nrows();
    let updates: Vec<Option<(DVector<f64>, DVector<f64>)>> = (0..d)
        .into_par_iter()
        .map(|r0| {
            if field.frozen[r0] {
                return Ok(None);
            }
            let weights = ps_weights(field, r0, c, problem.subjects, opts)?;
            let mut y = DVector::zeros(n_rows * weights.len());
            for (blk, &(r, w)) in weights.iter().enumerate() {
                let src = &problem.projections[r];
                for (dst, v) in y.as_mut_slice()[blk * n_rows..(blk + 1) * n_rows].iter_mut().zip(src.iter()) {
                    *dst = w * v;
                }
            }
            let stacked = StackedDesign::new(&problem.design, weights.iter().map(|&(_, w)| w).collect());
            let solver = PqrSolver::new(&stacked, lambda, &problem.omega, admm).map_err(|e| e.at_direction(r0))?;
            let fit = solver.solve(&y, tau).map_err(|e| e.at_direction(r0))?;
            let resid: Vec<f64> = y.iter().zip(fit.fitted.iter()).map(|(y, f)| y - f).collect();
            let density = residual_density_at_zero(&resid);
            let scale: f64 = weights.iter().map(|&(_, w)| w * w).sum();
            let gram = &problem.gram * scale;
            let var =
                sandwich_variances(&gram, density, tau, lambda, &problem.omega).map_err(|e| e.at_direction(r0))?;
            Ok(Some((fit.b, var)))
        })
        .collect::<Result<_>>()?;
    let mut next = field.clone();
    next.stage = c;
    for (r, upd) in updates.into_iter().enumerate() {
        if let Some((b, v)) = upd {
            next.coeffs.set_row(r, &b.transpose());
            next.variances.set_row(r, &v.transpose());
        }
    }
    Ok(next)
}

/// Outcome of the component-wise stop check for one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub direction: usize,
    /// `max_k (B_c^k − B_{c0}^k)² / σ²(B_{c0}^k)`.
    pub max_statistic: f64,
    pub stop: bool,
}

/// Stage III: flags directions whose stage-`c` coefficients moved further than
/// `χ²₁(.8/c)` (in variance units, for any component) from the reference stage.
pub fn stage3_check(field_c: &CoefficientField, field_c0: &CoefficientField, c: usize) -> Result<Vec<StopDecision>> {
    if c == 0 {
        return Err(Error::invalid("stop check needs stage c >= 1"));
    }
    let threshold = chi2_upper_quantile(1, 0.8 / c as f64)?;
    Ok((0..field_c.directions())
        .map(|r| {
            let max_statistic = field_c
                .coeffs
                .row(r)
                .iter()
                .zip(field_c0.coeffs.row(r).iter())
                .zip(field_c0.variances.row(r).iter())
                .map(|((a, b), v)| (a - b) * (a - b) / v)
                .fold(0.0, f64::max);
            StopDecision { direction: r, max_statistic, stop: max_statistic > threshold }
        })
        .collect())
}

/// Snapshot after one adaptive stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub stage: usize,
    pub coeffs: DMatrix<f64>,
    pub frozen: Vec<bool>,
    /// Stop statistic per direction; `None` before stop checking starts or for
    /// directions frozen earlier.
    pub max_statistic: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct MultistageFit {
    pub lambda: f64,
    pub initial: CoefficientField,
    pub updated: CoefficientField,
    pub trace: Vec<StageTrace>,
}

/// Runs Stage I and up to `max_stages` rounds of Stage II / Stage III.
pub fn run_multistage(
    problem: &ProjectedProblem,
    tau: f64,
    lambda: f64,
    opts: &PsOptions,
    admm: &AdmmOptions,
) -> Result<MultistageFit> {
    opts.validate()?;
    let initial = stage1_fit(problem, tau, lambda, admm)?;
    let mut prev = initial.clone();
    let mut reference: Option<CoefficientField> = None;
    let mut trace = Vec::new();
    for c in 1..=opts.max_stages {
        let mut cand = stage2_update(problem, &prev, c, opts, admm)?;
        if c == opts.c0 {
            reference = Some(cand.clone());
        }
        let mut stats = vec![None; cand.directions()];
        if c > opts.c0 {
            let reference = reference.as_ref().expect("reference stage precedes checks");
            for dec in stage3_check(&cand, reference, c)? {
                let r = dec.direction;
                if prev.frozen[r] {
                    continue;
                }
                stats[r] = Some(dec.max_statistic);
                if dec.stop {
                    cand.coeffs.set_row(r, &prev.coeffs.row(r));
                    cand.variances.set_row(r, &prev.variances.row(r));
                    cand.frozen[r] = true;
                }
            }
        }
        trace.push(StageTrace {
            stage: c,
            coeffs: cand.coeffs.clone(),
            frozen: cand.frozen.clone(),
            max_statistic: stats,
        });
        let done = cand.frozen.iter().all(|&f| f);
        prev = cand;
        if done {
            break;
        }
    }
    Ok(MultistageFit { lambda, initial, updated: prev, trace })
}

/// Writes the stage trace as `stage,direction_index,frozen,max_component_statistic`.
pub fn write_stage_trace_csv<W: std::io::Write>(trace: &[StageTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "direction_index", "frozen", "max_component_statistic"])?;
    for st in trace {
        for (r, (&frozen, stat)) in st.frozen.iter().zip(&st.max_statistic).enumerate() {
            w.write_record(&[
                st.stage.to_string(),
                r.to_string(),
                frozen.to_string(),
                stat.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Chooses `λ` by k-fold cross-validation over subjects.
///
/// Subject `i` goes to fold `i mod k`. Each candidate is scored by the mean
/// held-out check loss over a spread of probe directions.
pub fn select_lambda(
    data: &FunctionalDataset,
    basis: &SplineBasis,
    grid: &DirectionGrid,
    tau: f64,
    opts: &PsOptions,
    admm: &AdmmOptions,
) -> Result<f64> {
    validate_tau(tau)?;
    if opts.lambda_grid.is_empty() {
        return Err(Error::Config("lambda_grid is empty".into()));
    }
    if opts.lambda_grid.len() == 1 {
        return Ok(opts.lambda_grid[0]);
    }
    let n = data.n_subjects();
    let p = data.n_covariates();
    let k = opts.cv_folds;
    let h = basis.eval_matrix(data.t_grid())?;
    let omega = basis.block_penalty(p);
    let probes = grid.spread(opts.cv_directions);

    struct Fold {
        train: KronDesign,
        test: KronDesign,
        train_y: Vec<DVector<f64>>,
        test_y: Vec<DVector<f64>>,
    }
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % k == f);
        if test.len() < p || train.len() < p {
            return Err(Error::Config(format!(
                "cross-validation fold {f} has {} held-out and {} training subjects; need at least {p}",
                test.len(),
                train.len()
            )));
        }
        let (train_data, test_data) = (data.subset(&train), data.subset(&test));
        let proj = |d: &FunctionalDataset| -> Result<Vec<DVector<f64>>> {
            probes.iter().map(|&r| project_responses(d, grid.direction(r)).map(DVector::from_vec)).collect()
        };
        folds.push(Fold {
            train: KronDesign::new(train_data.covariates().clone(), h.clone()),
            test: KronDesign::new(test_data.covariates().clone(), h.clone()),
            train_y: proj(&train_data)?,
            test_y: proj(&test_data)?,
        });
    }

    let scores: Vec<f64> = opts
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let mut total = 0.0;
            let mut count = 0usize;
            for fold in &folds {
                let solver = PqrSolver::new(&fold.train, lambda, &omega, admm)?;
                let mut pred = DVector::zeros(fold.test.nrows());
                for (ytr, yte) in fold.train_y.iter().zip(&fold.test_y) {
                    let fit = solver.solve(ytr, tau)?;
                    fold.test.apply(&fit.b, &mut pred);
                    total += total_loss(yte.iter().zip(pred.iter()).map(|(y, f)| y - f), tau);
                    count += yte.len();
                }
            }
            Ok(total / count as f64)
        })
        .collect::<Result<_>>()?;
    let best = scores.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("nonempty grid");
    Ok(opts.lambda_grid[best])
}

/// Chooses `λ` (unless fixed) and runs the full multistage procedure.
pub fn fit_direction_field(
    data: &FunctionalDataset,
    basis: &SplineBasis,
    grid: &DirectionGrid,
    tau: f64,
    opts: &PsOptions,
    admm: &AdmmOptions,
) -> Result<MultistageFit> {
    opts.validate()?;
    admm.validate()?;
    let lambda = match opts.lambda {
        Some(l) => l,
        None => select_lambda(data, basis, grid, tau, opts, admm)?,
    };
    let problem = ProjectedProblem::new(data, basis, grid)?;
    run_multistage(&problem, tau, lambda, opts, admm)
}
