//! Bivariate directional quantile regression with varying coefficients.
//!
//! Each unit direction `s` turns the bivariate functional response into a
//! scalar one, `sᵀy(t)`, whose `τ`-quantile is modeled as `xᵀ C(s) H(t)` with a
//! B-spline basis `H`. Coefficients are fit by ADMM on a roughness-penalized
//! check loss, refined across neighboring directions by propagation-separation
//! weights, and combined into directional quantile envelopes.

pub mod admm;
pub mod config;
pub mod data;
pub mod design;
pub mod envelope;
pub mod error;
pub mod harness;
pub mod io;
pub mod loss;
pub mod ps;
pub mod sim;
pub mod spline;
pub mod stats;
pub mod variance;

pub use admm::{solve_pqr, AdmmOptions, AdmmResult, PqrSolver};
pub use config::RunConfig;
pub use data::{project_responses, DirectionGrid, FunctionalDataset};
pub use design::{design_matrix, Design, KronDesign, StackedDesign};
pub use envelope::{build_envelope, contains, coverage, curvature, directional_quantiles, Envelope};
pub use error::{Error, Result};
pub use io::{Estimate, FitArtifact};
pub use loss::{check_loss, check_prox};
pub use ps::{
    fit_direction_field, ps_weights, run_multistage, select_lambda, stage1_fit, stage2_update, stage3_check,
    CoefficientField, MultistageFit, ProjectedProblem, PsOptions,
};
pub use spline::{BasisSpec, SplineBasis};
pub use stats::chi2_upper_quantile;
pub use variance::estimate_variances;
