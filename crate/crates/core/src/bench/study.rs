//! Sensitivity studies: training-set size, latent dimension and VLM panel count.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::export::float_or_inf;
use super::{best_speedup, envelope, evaluate_setting, make_test_set, work_precision, Method, SweepConfig, TestSet};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::net::PseudoInvertibleNet;
use crate::solvers::SolverSpec;
use crate::systems::OdeSystem;
use crate::train::{train, SampleMode, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    SampleSize,
    LatentDim,
    PanelCount,
}

impl StudyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudyKind::SampleSize => "sample-size",
            StudyKind::LatentDim => "latent-dim",
            StudyKind::PanelCount => "panel-count",
        }
    }

    pub fn default_values(&self) -> Vec<usize> {
        match self {
            StudyKind::SampleSize => vec![10, 30, 100, 300, 600],
            StudyKind::LatentDim => vec![8, 16, 32, 64],
            StudyKind::PanelCount => vec![10, 25, 50, 100, 200],
        }
    }
}

impl FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample-size" => Ok(StudyKind::SampleSize),
            "latent-dim" => Ok(StudyKind::LatentDim),
            "panel-count" => Ok(StudyKind::PanelCount),
            other => Err(Error::InvalidArgument(format!("unknown study `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyOptions {
    /// Sweep values; the study's defaults when absent.
    pub values: Option<Vec<usize>>,
    pub repetitions: usize,
    /// Original-space RK4 step of the panel study.
    pub panel_original_dt: f64,
    /// Latent-space Euler step of the panel study.
    pub panel_latent_dt: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { values: None, repetitions: 1, panel_original_dt: 0.06, panel_latent_dt: 0.2 }
    }
}

impl StudyOptions {
    pub fn values_for(&self, kind: StudyKind) -> Result<Vec<usize>> {
        let v = self.values.clone().unwrap_or_else(|| kind.default_values());
        if v.is_empty() || v.contains(&0) || v.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("study values must be positive and strictly increasing".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        Ok(v)
    }
}

/// One trained network of a study. Fields that do not apply to the study
/// kind, or could not be computed, are NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study: StudyKind,
    pub value: usize,
    pub repetition: usize,
    pub seed: u64,
    /// `ok`, or the reason the point has no result.
    pub status: String,
    #[serde(with = "float_or_inf")]
    pub best_loss: f64,
    /// Best envelope call ratio (original / latent) inside the MSE band.
    #[serde(with = "float_or_inf")]
    pub speedup: f64,
    #[serde(with = "float_or_inf")]
    pub speedup_mse: f64,
    #[serde(with = "float_or_inf")]
    pub original_mse: f64,
    #[serde(with = "float_or_inf")]
    pub latent_mse: f64,
    #[serde(with = "float_or_inf")]
    pub original_wall_time_s: f64,
    #[serde(with = "float_or_inf")]
    pub latent_wall_time_s: f64,
    /// Latent over original wall time.
    #[serde(with = "float_or_inf")]
    pub wall_time_ratio: f64,
}

impl StudyRecord {
    fn empty(study: StudyKind, value: usize, repetition: usize, seed: u64) -> Self {
        Self {
            study,
            value,
            repetition,
            seed,
            status: "ok".into(),
            best_loss: f64::NAN,
            speedup: f64::NAN,
            speedup_mse: f64::NAN,
            original_mse: f64::NAN,
            latent_mse: f64::NAN,
            original_wall_time_s: f64::NAN,
            latent_wall_time_s: f64::NAN,
            wall_time_ratio: f64::NAN,
        }
    }
}

const STREAM_TESTS: u64 = 3;

fn test_set(sys: &dyn OdeSystem, sweep: &SweepConfig, seed: u64) -> Result<TestSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_TESTS);
    make_test_set(sys, sweep.test_ics, sweep.ic_box_factor, sweep.horizon.unwrap_or(sys.horizon()), sweep.grid_points, &mut rng)
}

fn train_logged(
    sys: &dyn OdeSystem,
    cfg: &TrainConfig,
    rec: &mut StudyRecord,
    log: &mut dyn FnMut(&str),
) -> Option<PseudoInvertibleNet> {
    log(&format!("{} value={} rep={} seed={}: training", rec.study.as_str(), rec.value, rec.repetition, rec.seed));
    match train(sys, cfg, &mut |_| {}) {
        Ok(r) => {
            rec.best_loss = r.best_loss.unwrap_or(f64::NAN);
            Some(r.net)
        }
        Err(e) => {
            rec.status = format!("training failed: {e}");
            log(&rec.status);
            None
        }
    }
}

/// Trains one network per (value, repetition) with `configure` applied to
/// the base config and scores it by envelope speedup on a shared test set.
fn speedup_study(
    kind: StudyKind,
    sys: &dyn OdeSystem,
    base: &TrainConfig,
    sweep: &SweepConfig,
    opts: &StudyOptions,
    seed: u64,
    configure: &dyn Fn(&mut TrainConfig, usize),
    log: &mut dyn FnMut(&str),
) -> Result<Vec<StudyRecord>> {
    let values = opts.values_for(kind)?;
    let tests = test_set(sys, sweep, seed)?;
    let specs = sweep.specs();
    let original = work_precision(sys, None, &specs, &tests, sweep.final_only, seed)?;
    let orig_env = envelope(&original, Method::Original);
    let [lo, hi] = sweep.mse_band_for(sys.name());
    let mut out = Vec::new();
    for &value in &values {
        for rep in 0..opts.repetitions {
            let run_seed = seed + rep as u64;
            let mut rec = StudyRecord::empty(kind, value, rep, run_seed);
            let mut cfg = TrainConfig { seed: run_seed, ..base.clone() };
            configure(&mut cfg, value);
            if let Some(net) = train_logged(sys, &cfg, &mut rec, log) {
                let latent = work_precision(sys, Some(&net), &specs, &tests, sweep.final_only, run_seed)?;
                match best_speedup(&orig_env, &envelope(&latent, Method::Latent), lo, hi) {
                    Some((at, s)) => {
                        rec.speedup = s;
                        rec.speedup_mse = at;
                    }
                    None => rec.status = "no envelope overlap in the MSE band".into(),
                }
                log(&format!("  speedup {:.3} at mse {:.3e}", rec.speedup, rec.speedup_mse));
            }
            out.push(rec);
        }
    }
    Ok(out)
}

/// Training-set size sweep. Uniform sampling draws `value` points;
/// trajectory sampling uses `value / per_trajectory` runs (at least one).
pub fn sample_size_study(
    system: &SystemConfig,
    base: &TrainConfig,
    sweep: &SweepConfig,
    opts: &StudyOptions,
    seed: u64,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<StudyRecord>> {
    let sys = system.build()?;
    let configure = |cfg: &mut TrainConfig, n: usize| {
        cfg.samples = match cfg.samples {
            SampleMode::Uniform { .. } => SampleMode::Uniform { points: n },
            SampleMode::Trajectories { per_trajectory, escape_factor, .. } => SampleMode::Trajectories {
                trajectories: (n / per_trajectory).max(1),
                per_trajectory,
                escape_factor,
            },
        };
    };
    speedup_study(StudyKind::SampleSize, sys.as_ref(), base, sweep, opts, seed, &configure, log)
}

pub fn latent_dim_study(
    system: &SystemConfig,
    base: &TrainConfig,
    sweep: &SweepConfig,
    opts: &StudyOptions,
    seed: u64,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<StudyRecord>> {
    let sys = system.build()?;
    let configure = |cfg: &mut TrainConfig, m: usize| cfg.latent_dim = m;
    speedup_study(StudyKind::LatentDim, sys.as_ref(), base, sweep, opts, seed, &configure, log)
}

/// Wing-panel sweep on the VLM system (tail panels scaled along). Each
/// trained network is compared at fixed solver settings: RK4 in the original
/// space against Euler in the latent space, by summed wall time over the
/// test set.
pub fn panel_count_study(
    system: &SystemConfig,
    base: &TrainConfig,
    sweep: &SweepConfig,
    opts: &StudyOptions,
    seed: u64,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<StudyRecord>> {
    let SystemConfig::Vlm(vlm) = system else {
        return Err(Error::Config("the panel-count study needs a vlm system".into()));
    };
    let values = opts.values_for(StudyKind::PanelCount)?;
    let original_spec = SolverSpec::rk4(opts.panel_original_dt).with_grid(sweep.grid_points);
    let latent_spec = SolverSpec::euler(opts.panel_latent_dt).with_grid(sweep.grid_points);
    let mut out = Vec::new();
    for &panels in &values {
        let sys = SystemConfig::Vlm(vlm.clone().with_panels(panels)).build()?;
        let tests = test_set(sys.as_ref(), sweep, seed)?;
        let original = evaluate_setting(sys.as_ref(), None, &original_spec, &tests, sweep.final_only);
        for rep in 0..opts.repetitions {
            let run_seed = seed + rep as u64;
            let mut rec = StudyRecord::empty(StudyKind::PanelCount, panels, rep, run_seed);
            rec.original_mse = mean(original.iter().map(|o| o.mse));
            rec.original_wall_time_s = original.iter().map(|o| o.wall_time_s).sum();
            let cfg = TrainConfig { seed: run_seed, ..base.clone() };
            if let Some(net) = train_logged(sys.as_ref(), &cfg, &mut rec, log) {
                let latent = evaluate_setting(sys.as_ref(), Some(&net), &latent_spec, &tests, sweep.final_only);
                rec.latent_mse = mean(latent.iter().map(|o| o.mse));
                rec.latent_wall_time_s = latent.iter().map(|o| o.wall_time_s).sum();
                rec.wall_time_ratio = rec.latent_wall_time_s / rec.original_wall_time_s;
                log(&format!(
                    "  wall time ratio {:.4} (mse original {:.3e}, latent {:.3e})",
                    rec.wall_time_ratio, rec.original_mse, rec.latent_mse
                ));
            }
            out.push(rec);
        }
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn run_study(
    kind: StudyKind,
    system: &SystemConfig,
    base: &TrainConfig,
    sweep: &SweepConfig,
    opts: &StudyOptions,
    seed: u64,
    log: &mut dyn FnMut(&str),
) -> Result<Vec<StudyRecord>> {
    match kind {
        StudyKind::SampleSize => sample_size_study(system, base, sweep, opts, seed, log),
        StudyKind::LatentDim => latent_dim_study(system, base, sweep, opts, seed, log),
        StudyKind::PanelCount => panel_count_study(system, base, sweep, opts, seed, log),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LinearConfig;

    fn tiny_train() -> TrainConfig {
        TrainConfig {
            latent_dim: 4,
            coupling_layers: 2,
            hidden_width: 4,
            hidden_depth: 1,
            epochs: 3,
            directions: 2,
            samples: SampleMode::Uniform { points: 8 },
            ..TrainConfig::linear_defaults()
        }
    }

    fn tiny_sweep() -> SweepConfig {
        SweepConfig {
            euler_dt: vec![0.05, 0.1],
            rk4_dt: vec![0.1],
            dopri5_tol: vec![1e-4],
            test_ics: 2,
            grid_points: 11,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn values_validated() {
        let opts = StudyOptions { values: Some(vec![30, 10]), ..Default::default() };
        assert!(opts.values_for(StudyKind::SampleSize).is_err());
        assert_eq!(StudyOptions::default().values_for(StudyKind::LatentDim).unwrap(), vec![8, 16, 32, 64]);
    }

    #[test]
    fn sample_study_is_reproducible() {
        let system = SystemConfig::Linear(LinearConfig::default());
        let opts = StudyOptions { values: Some(vec![5, 10]), ..Default::default() };
        let run = || sample_size_study(&system, &tiny_train(), &tiny_sweep(), &opts, 4, &mut |_| {}).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 2);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert!(a.iter().all(|r| r.best_loss.is_finite()));
    }

    #[test]
    fn panel_study_needs_vlm() {
        let system = SystemConfig::Linear(LinearConfig::default());
        assert!(panel_count_study(&system, &tiny_train(), &tiny_sweep(), &StudyOptions::default(), 0, &mut |_| {}).is_err());
    }
}
