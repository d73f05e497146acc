//! JSON artifacts written by the command-line tool.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, FORMAT_VERSION};
use crate::data::DirectionGrid;
use crate::envelope::ProbeEnvelope;
use crate::error::{Error, Result};
use crate::harness::{Check, DesignReport};
use crate::ps::{CoefficientField, MultistageFit, StageTrace};
use crate::spline::{BasisSpec, SplineBasis};

/// Coefficients of one stage, one row per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub stage: usize,
    pub coeffs: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub frozen: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub coeffs: Vec<Vec<f64>>,
    pub frozen: Vec<bool>,
    pub max_statistic: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauFit {
    pub tau: f64,
    pub lambda: f64,
    pub initial: FieldRecord,
    pub updated: FieldRecord,
    pub trace: Vec<StageRecord>,
}

/// Which estimate of a fitted field to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimate {
    Initial,
    Updated,
}

/// Everything needed to rebuild envelopes from a fit without the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format_version: u32,
    pub config: RunConfig,
    pub basis: BasisSpec,
    pub directions: usize,
    /// Number of covariates, intercept included.
    pub covariates: usize,
    pub fits: Vec<TauFit>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Validation(format!("{what}: every row must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl FieldRecord {
    fn new(f: &CoefficientField) -> Self {
        FieldRecord { stage: f.stage, coeffs: rows(&f.coeffs), variances: rows(&f.variances), frozen: f.frozen.clone() }
    }
}

impl From<&StageTrace> for StageRecord {
    fn from(s: &StageTrace) -> Self {
        StageRecord {
            stage: s.stage,
            coeffs: rows(&s.coeffs),
            frozen: s.frozen.clone(),
            max_statistic: s.max_statistic.clone(),
        }
    }
}

impl FitArtifact {
    pub fn new(
        config: RunConfig,
        basis: BasisSpec,
        grid: &DirectionGrid,
        covariates: usize,
        fits: &[MultistageFit],
    ) -> Self {
        FitArtifact {
            format_version: FORMAT_VERSION,
            config,
            basis,
            directions: grid.len(),
            covariates,
            fits: fits
                .iter()
                .map(|f| TauFit {
                    tau: f.initial.tau,
                    lambda: f.lambda,
                    initial: FieldRecord::new(&f.initial),
                    updated: FieldRecord::new(&f.updated),
                    trace: f.trace.iter().map(StageRecord::from).collect(),
                })
                .collect(),
        }
    }

    pub fn grid(&self) -> Result<DirectionGrid> {
        DirectionGrid::new(self.directions)
    }

    pub fn spline_basis(&self) -> Result<SplineBasis> {
        self.basis.build()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.tau).collect()
    }

    /// Rebuilds the coefficient field fitted at `tau`.
    pub fn field(&self, tau: f64, which: Estimate) -> Result<CoefficientField> {
        let fit = self
            .fits
            .iter()
            .find(|f| (f.tau - tau).abs() < 1e-12)
            .ok_or_else(|| Error::invalid(format!("no fit at tau = {tau}; available: {:?}", self.taus())))?;
        let rec = match which {
            Estimate::Initial => &fit.initial,
            Estimate::Updated => &fit.updated,
        };
        let k = self.covariates * self.spline_basis()?.dim();
        let grid = self.grid()?;
        if rec.coeffs.len() != grid.len() || rec.variances.len() != grid.len() || rec.frozen.len() != grid.len() {
            return Err(Error::Validation(format!("fit at tau = {tau}: expected {} directions", grid.len())));
        }
        Ok(CoefficientField {
            grid,
            tau,
            lambda: fit.lambda,
            coeffs: matrix(&rec.coeffs, k, "coeffs")?,
            variances: matrix(&rec.variances, k, "variances")?,
            stage: rec.stage,
            frozen: rec.frozen.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let art: FitArtifact = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        if art.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "{}: format version {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                art.format_version
            )));
        }
        Ok(art)
    }
}

/// Envelopes exported by the `envelope` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeExport {
    pub format_version: u32,
    pub config: RunConfig,
    pub estimate: Estimate,
    pub envelopes: Vec<ProbeEnvelope>,
}

/// Table reproduction results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceExport {
    pub format_version: u32,
    pub config: RunConfig,
    pub reports: Vec<DesignReport>,
    pub checks: Vec<Check>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
