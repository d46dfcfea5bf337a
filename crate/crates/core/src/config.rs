//! JSON run configuration shared by the command-line tool and tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layer_sizes;
use crate::problem::{initial_pressure, Drainage, Grid, LoadingParams, ProblemSpec};
use crate::trainer::{Mode, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Problem section. The initial pressure is given either directly as `p0`
/// or through `loading`; with neither it defaults to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub height: f64,
    pub cv: f64,
    pub drainage: Drainage,
    pub t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loading: Option<LoadingParams>,
}

impl ProblemConfig {
    pub fn resolve(&self) -> Result<ProblemSpec> {
        let p0 = match (self.p0, &self.loading) {
            (Some(_), Some(_)) => return Err(Error::Config("give either p0 or loading, not both".into())),
            (Some(p0), None) => p0,
            (None, Some(lp)) => initial_pressure(lp)?,
            (None, None) => 1.0,
        };
        ProblemSpec::new(self.height, self.cv, self.drainage, self.t_max, p0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub units: usize,
}

impl NetworkConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        layer_sizes(self.hidden_layers, self.units)
    }
}

/// Finite-difference oracle settings. With both `n_z` and `dt` a single
/// solve is run; otherwise the grid is refined until successive solutions
/// differ by less than `tolerance`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_oracle_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_z: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

fn default_oracle_tolerance() -> f64 {
    1e-4
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            tolerance: default_oracle_tolerance(),
            n_z: None,
            dt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub problem: ProblemConfig,
    pub grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not depend on which command runs.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.problem.resolve().map_err(config_error)?;
        self.grid.validate().map_err(config_error)?;
        if let Some(net) = &self.network {
            if net.hidden_layers == 0 || net.units == 0 {
                return Err(Error::Config("network needs at least one hidden layer and unit".into()));
            }
        }
        if let Some(training) = &self.training {
            training.validate().map_err(config_error)?;
            if let Some(n) = training.sample_size {
                if training.mode == Mode::Inverse && n > self.grid.len() {
                    return Err(Error::Config(format!(
                        "sample_size {n} exceeds the {} grid points",
                        self.grid.len()
                    )));
                }
            }
        }
        if let Some(oracle) = &self.oracle {
            if !(oracle.tolerance.is_finite() && oracle.tolerance > 0.0) {
                return Err(Error::Config("oracle tolerance must be positive".into()));
            }
            if oracle.n_z.is_some() != oracle.dt.is_some() {
                return Err(Error::Config("oracle n_z and dt must be given together".into()));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        self.problem.resolve().map_err(config_error)
    }

    /// Network and training sections, checked against the expected mode.
    pub fn training_setup(&self, mode: Mode) -> Result<(Vec<usize>, &TrainConfig)> {
        let net = self
            .network
            .as_ref()
            .ok_or_else(|| Error::Config("missing `network` section".into()))?;
        let training = self
            .training
            .as_ref()
            .ok_or_else(|| Error::Config("missing `training` section".into()))?;
        if training.mode != mode {
            return Err(Error::Config(format!(
                "training.mode is {:?}, this command needs {mode:?}",
                training.mode
            )));
        }
        Ok((net.layer_sizes(), training))
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::InvalidParameter(msg) => Error::Config(msg),
        other => other,
    }
}
