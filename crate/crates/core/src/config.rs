//! Run configuration: one TOML file covering every stage, with all defaults
//! materialized when echoed back.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::AdmmOptions;
use crate::error::{Error, Result};
use crate::harness::Tolerances;
use crate::ps::PsOptions;
use crate::sim::SimConfig;
use crate::spline::BasisSpec;

/// Bumped whenever an output file layout changes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Dataset CSV; the `fit` command's positional argument takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub directions: usize,
    pub tau_levels: Vec<f64>,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { data: None, directions: 100, tau_levels: vec![0.05, 0.1, 0.2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproduceSection {
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Left unset, each command picks its own basis: evenly spaced knots on
    /// `[0, 1]` for fitting, the simulation-study knots for `reproduce`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisSpec>,
    pub admm: AdmmOptions,
    pub ps: PsOptions,
    pub sim: SimConfig,
    pub fit: FitSection,
    pub output: OutputSection,
    pub reproduce: ReproduceSection,
}

impl RunConfig {
    /// Parses TOML text. Errors carry the line and column of the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = &self.basis {
            b.build().map_err(|e| Error::Config(format!("basis: {e}")))?;
        }
        self.admm.validate()?;
        self.ps.validate()?;
        self.sim.validate()?;
        if self.fit.directions < 3 {
            return Err(Error::Config("fit: directions must be at least 3".into()));
        }
        if self.fit.tau_levels.is_empty() || self.fit.tau_levels.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Config("fit: tau_levels must be nonempty and inside (0, 1)".into()));
        }
        Ok(())
    }

    /// Fixes the basis to `fallback` when none was configured, so the echoed
    /// config records exactly what ran.
    pub fn resolve_basis(&mut self, fallback: BasisSpec) -> BasisSpec {
        self.basis.get_or_insert(fallback).clone()
    }

    /// Effective configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}
