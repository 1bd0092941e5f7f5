use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{integrate, SolverSpec};
use crate::systems::{jacobian, DomainBox, OdeSystem};

/// How training states are generated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SampleMode {
    /// `points` i.i.d. draws from the domain box.
    Uniform { points: usize },
    /// `trajectories` runs from random box initial conditions, each
    /// subsampled at `per_trajectory` uniformly spaced times over the horizon.
    /// Runs leaving the domain box scaled by `escape_factor` are redrawn.
    Trajectories { trajectories: usize, per_trajectory: usize, escape_factor: f64 },
}

impl SampleMode {
    pub const DEFAULT_PER_TRAJECTORY: usize = 25;
    pub const DEFAULT_ESCAPE_FACTOR: f64 = 3.0;

    pub fn trajectories(count: usize) -> Self {
        SampleMode::Trajectories {
            trajectories: count,
            per_trajectory: Self::DEFAULT_PER_TRAJECTORY,
            escape_factor: Self::DEFAULT_ESCAPE_FACTOR,
        }
    }

    pub fn len(&self) -> usize {
        match *self {
            SampleMode::Uniform { points } => points,
            SampleMode::Trajectories { trajectories, per_trajectory, .. } => trajectories * per_trajectory,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    UniformBox,
    Trajectories { trajectories: usize, per_trajectory: usize },
}

/// Training states in the original space.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    /// One state per row.
    pub points: Array2<f64>,
    pub provenance: Provenance,
    /// Box every point lies in.
    pub bounds: DomainBox,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i).to_slice().expect("standard layout")
    }
}

const TRAJECTORY_RTOL: f64 = 1e-9;
const MAX_REDRAW_FACTOR: usize = 50;

pub fn make_samples<R: Rng + ?Sized>(sys: &dyn OdeSystem, mode: &SampleMode, rng: &mut R) -> Result<SampleSet> {
    let n = sys.dim();
    let domain = sys.domain();
    match *mode {
        SampleMode::Uniform { points } => {
            if points == 0 {
                return Err(Error::InvalidArgument("sample count must be positive".into()));
            }
            let mut out = Array2::zeros((points, n));
            for mut row in out.rows_mut() {
                row.assign(&ndarray::Array1::from(domain.sample(rng)));
            }
            Ok(SampleSet { points: out, provenance: Provenance::UniformBox, bounds: domain.clone() })
        }
        SampleMode::Trajectories { trajectories, per_trajectory, escape_factor } => {
            if trajectories == 0 || per_trajectory == 0 {
                return Err(Error::InvalidArgument("trajectory sampling needs positive counts".into()));
            }
            if !(escape_factor >= 1.0) {
                return Err(Error::InvalidArgument("escape factor must be at least 1".into()));
            }
            let bounds = domain.scaled(escape_factor);
            let spec = SolverSpec::dopri5(TRAJECTORY_RTOL, TRAJECTORY_RTOL).with_grid(per_trajectory.max(2));
            let mut out = Array2::zeros((trajectories * per_trajectory, n));
            let mut accepted = 0;
            let mut attempts = 0;
            while accepted < trajectories {
                attempts += 1;
                if attempts > MAX_REDRAW_FACTOR * trajectories {
                    return Err(Error::InvalidArgument(format!(
                        "only {accepted} of {trajectories} trajectories stayed inside the escape box"
                    )));
                }
                let x0 = domain.sample(rng);
                let run = match integrate(|x| sys.rhs(x), &x0, 0.0, sys.horizon(), &spec) {
                    Ok(r) => r,
                    Err(_) => continue,
                };
                // a single requested sample is the initial state
                let states: Vec<&Vec<f64>> = run.states.iter().take(per_trajectory).collect();
                if !states.iter().all(|s| bounds.contains(s)) {
                    continue;
                }
                for (j, s) in states.iter().enumerate() {
                    out.row_mut(accepted * per_trajectory + j).assign(&ndarray::ArrayView1::from(s.as_slice()));
                }
                accepted += 1;
            }
            Ok(SampleSet { points: out, provenance: Provenance::Trajectories { trajectories, per_trajectory }, bounds })
        }
    }
}

/// Sample states together with `f(x_i)` and `J_f(x_i)`, which stay fixed
/// during training.
#[derive(Clone, Debug)]
pub struct PreparedSamples {
    pub x: Array2<f64>,
    pub f: Array2<f64>,
    /// Row-major `n×n` Jacobians, one after another.
    pub jac: Vec<f64>,
}

impl PreparedSamples {
    pub fn new(sys: &dyn OdeSystem, samples: &SampleSet) -> Result<Self> {
        let (count, n) = samples.points.dim();
        let mut f = Array2::zeros((count, n));
        let mut jac = Vec::with_capacity(count * n * n);
        for i in 0..count {
            let x = samples.point(i);
            let fx = sys.rhs(x)?;
            if fx.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { sample: i });
            }
            f.row_mut(i).assign(&ndarray::ArrayView1::from(fx.as_slice()));
            jac.extend(jacobian(sys, x)?);
        }
        Ok(Self { x: samples.points.clone(), f, jac })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}
