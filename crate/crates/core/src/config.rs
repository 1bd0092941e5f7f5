//! Experiment configuration files (TOML).
//!
//! ```toml
//! [system]
//! kind = "linear"          # linear | vortex | vlm, remaining keys per kind
//!
//! [train]                  # overrides of the per-system defaults
//! epochs = 2000
//!
//! [bench]
//! test_ics = 10
//!
//! [study]
//! repetitions = 3
//!
//! [simulate]
//! solver = "rk4"
//! dt = 0.01
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{StudyOptions, SweepConfig};
use crate::error::{Error, Result};
use crate::solvers::{SolverKind, SolverSpec};
use crate::systems::{LinearSystem, OdeSystem, VlmConfig, VlmSystem, VortexConfig, VortexSystem};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    pub half_width: f64,
    pub horizon: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { half_width: 1.0, horizon: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemConfig {
    Linear(LinearConfig),
    Vortex(VortexConfig),
    Vlm(VlmConfig),
}

impl SystemConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SystemConfig::Linear(_) => "linear",
            SystemConfig::Vortex(_) => "vortex",
            SystemConfig::Vlm(_) => "vlm",
        }
    }

    pub fn build(&self) -> Result<Box<dyn OdeSystem>> {
        Ok(match self {
            SystemConfig::Linear(c) => {
                Box::new(LinearSystem::new(crate::systems::BENCHMARK_MATRIX, c.half_width, c.horizon))
            }
            SystemConfig::Vortex(c) => Box::new(VortexSystem::new(c.clone())),
            SystemConfig::Vlm(c) => Box::new(VlmSystem::new(c.clone())?),
        })
    }
}

/// Settings for a single `simulate` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub solver: SolverKind,
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    pub grid_points: usize,
    /// Initial state; the center of the domain box when absent.
    pub x0: Option<Vec<f64>>,
    pub horizon: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { solver: SolverKind::Rk4, dt: 0.01, rtol: 1e-6, atol: 1e-6, grid_points: SolverSpec::DEFAULT_GRID, x0: None, horizon: None }
    }
}

impl SimulateConfig {
    pub fn spec(&self) -> SolverSpec {
        let s = match self.solver {
            SolverKind::Euler => SolverSpec::euler(self.dt),
            SolverKind::Rk4 => SolverSpec::rk4(self.dt),
            SolverKind::Dopri5 => SolverSpec::dopri5(self.rtol, self.atol),
        };
        s.with_grid(self.grid_points)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub train: TrainConfig,
    pub bench: SweepConfig,
    pub study: StudyOptions,
    pub simulate: SimulateConfig,
    /// Checkpoint written by `train` and read by `simulate --latent` and `bench`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: SystemConfig,
    #[serde(default)]
    train: Option<toml::Table>,
    #[serde(default)]
    bench: SweepConfig,
    #[serde(default)]
    study: StudyOptions,
    #[serde(default)]
    simulate: SimulateConfig,
    #[serde(default)]
    checkpoint: Option<PathBuf>,
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(config_error)?;
        let defaults = TrainConfig::defaults_for(raw.system.name())?;
        let train = match raw.train {
            None => defaults,
            Some(overrides) => {
                let mut base = toml::Table::try_from(&defaults).map_err(config_error)?;
                base.extend(overrides);
                base.try_into::<TrainConfig>().map_err(config_error)?
            }
        };
        train.validate()?;
        raw.bench.validate()?;
        Ok(Self {
            system: raw.system,
            train,
            bench: raw.bench,
            study: raw.study,
            simulate: raw.simulate,
            checkpoint: raw.checkpoint,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
