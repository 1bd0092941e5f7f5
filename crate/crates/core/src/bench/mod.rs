//! Work-precision sweeps, lower envelopes and the sensitivity studies.

mod export;
mod study;

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use export::{parse_csv, parse_jsonl, read_records, to_csv, to_jsonl, write_records, write_study_csv, ExportFormat};
pub use study::{panel_count_study, run_study, sample_size_study, latent_dim_study, StudyKind, StudyOptions, StudyRecord};

use crate::error::{Error, Result};
use crate::latent::LatentSystem;
use crate::net::PseudoInvertibleNet;
use crate::solvers::{integrate, mse, mse_final, output_grid, SolveResult, SolverKind, SolverSpec};
use crate::systems::OdeSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Original,
    Latent,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Latent => "latent",
        }
    }
}

/// One solver setting evaluated over a whole test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkPrecisionRecord {
    pub system: String,
    pub method: Method,
    pub solver: SolverKind,
    /// Step size for Euler and RK4, `rtol = atol` for Dopri5.
    pub setting: f64,
    /// Right-hand-side calls summed over all test trajectories.
    pub n_fcalls: u64,
    /// Mean of the per-trajectory errors; `inf` if any run failed.
    #[serde(with = "export::float_or_inf")]
    pub mse: f64,
    pub wall_time_s: f64,
    pub seed: u64,
}

/// Log-spaced values from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub euler_dt: Vec<f64>,
    pub rk4_dt: Vec<f64>,
    pub dopri5_tol: Vec<f64>,
    /// Test initial conditions per setting.
    pub test_ics: usize,
    /// Test initial conditions come from the domain box scaled by this factor.
    pub ic_box_factor: f64,
    pub grid_points: usize,
    /// Simulation horizon; the system default when absent.
    pub horizon: Option<f64>,
    /// Score only the final state instead of the whole output grid.
    pub final_only: bool,
    /// MSE interval in which envelope speedups are read off; a per-system
    /// default when absent.
    pub mse_band: Option<[f64; 2]>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            euler_dt: logspace(1e-3, 0.2, 12),
            rk4_dt: logspace(1e-3, 0.2, 12),
            dopri5_tol: logspace(1e-12, 1e-2, 11),
            test_ics: 10,
            ic_box_factor: 1.5,
            grid_points: SolverSpec::DEFAULT_GRID,
            horizon: None,
            final_only: false,
            mse_band: None,
        }
    }
}

impl SweepConfig {
    pub fn specs(&self) -> Vec<SolverSpec> {
        let g = self.grid_points;
        let mut out: Vec<SolverSpec> = self.euler_dt.iter().map(|&dt| SolverSpec::euler(dt).with_grid(g)).collect();
        out.extend(self.rk4_dt.iter().map(|&dt| SolverSpec::rk4(dt).with_grid(g)));
        out.extend(self.dopri5_tol.iter().map(|&tol| SolverSpec::dopri5(tol, tol).with_grid(g)));
        out
    }

    pub fn mse_band_for(&self, system: &str) -> [f64; 2] {
        self.mse_band.unwrap_or_else(|| default_mse_band(system))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.euler_dt) || !positive(&self.rk4_dt) || !positive(&self.dopri5_tol) {
            return Err(Error::Config("solver settings must be positive".into()));
        }
        if self.test_ics == 0 || self.grid_points < 2 || !(self.ic_box_factor > 0.0) {
            return Err(Error::Config("test_ics, grid_points and ic_box_factor must be positive".into()));
        }
        if let Some([lo, hi]) = self.mse_band {
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::Config("mse_band must satisfy 0 < lo < hi".into()));
            }
        }
        Ok(())
    }
}

pub fn default_mse_band(system: &str) -> [f64; 2] {
    match system {
        "vortex" => [1e-5, 1e-3],
        "vlm" => [1e-6, 1e-3],
        _ => [1e-4, 1e-2],
    }
}

/// Held-out initial conditions and their reference trajectories.
#[derive(Clone, Debug)]
pub struct TestSet {
    pub ics: Vec<Vec<f64>>,
    pub references: Vec<SolveResult>,
    pub horizon: f64,
    pub grid_points: usize,
}

const REFERENCE_TOL: f64 = 1e-12;

/// Reference trajectory: the closed form when the system has one, else
/// Dopri5 at `rtol = atol = 1e-12`.
pub fn reference_solution(sys: &dyn OdeSystem, x0: &[f64], horizon: f64, grid_points: usize) -> Result<SolveResult> {
    let times = output_grid(0.0, horizon, grid_points);
    if sys.exact(x0, 0.0).is_some() {
        let states = times.iter().map(|&t| sys.exact(x0, t).expect("closed form")).collect();
        return Ok(SolveResult { times, states, n_fcalls: 0, n_base_fcalls: 0, n_steps: 0, n_rejected: 0, wall_time: 0.0 });
    }
    integrate(|x| sys.rhs(x), x0, 0.0, horizon, &SolverSpec::dopri5(REFERENCE_TOL, REFERENCE_TOL).with_grid(grid_points))
}

/// Draws `count` initial conditions from the domain box scaled by
/// `box_factor`. Draws whose reference run fails are replaced.
pub fn make_test_set<R: Rng + ?Sized>(
    sys: &dyn OdeSystem,
    count: usize,
    box_factor: f64,
    horizon: f64,
    grid_points: usize,
    rng: &mut R,
) -> Result<TestSet> {
    let domain = sys.domain().scaled(box_factor);
    let mut ics = Vec::with_capacity(count);
    let mut references = Vec::with_capacity(count);
    let mut attempts = 0;
    while ics.len() < count {
        attempts += 1;
        if attempts > 50 * count {
            return Err(Error::InvalidArgument(format!("could not find {count} test initial conditions with a valid reference")));
        }
        let x0 = domain.sample(rng);
        if let Ok(r) = reference_solution(sys, &x0, horizon, grid_points) {
            if r.states.iter().flatten().all(|v| v.is_finite()) {
                ics.push(x0);
                references.push(r);
            }
        }
    }
    Ok(TestSet { ics, references, horizon, grid_points })
}

/// Result of one solver setting on one test trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryOutcome {
    pub n_fcalls: u64,
    /// `inf` when the run failed.
    pub mse: f64,
    pub wall_time_s: f64,
}

/// Runs one initial condition in the original or (with `net`) the latent space.
pub fn run_trajectory(
    sys: &dyn OdeSystem,
    net: Option<&PseudoInvertibleNet>,
    x0: &[f64],
    reference: &SolveResult,
    spec: &SolverSpec,
    final_only: bool,
) -> TrajectoryOutcome {
    let start = Instant::now();
    let mut calls = 0u64;
    let horizon = *reference.times.last().expect("non-empty reference");
    let run: Result<SolveResult> = match net {
        None => integrate(
            |x| {
                calls += 1;
                sys.rhs(x)
            },
            x0,
            0.0,
            horizon,
            spec,
        ),
        Some(net) => {
            let lat = LatentSystem::new(net, sys);
            net.encode(x0).and_then(|z0| {
                let mut r = integrate(
                    |z| {
                        calls += 1;
                        lat.rhs(z)
                    },
                    &z0,
                    0.0,
                    horizon,
                    spec,
                )?;
                r.states = r.states.iter().map(|z| net.decode(z)).collect::<Result<_>>()?;
                Ok(r)
            })
        }
    };
    let err = run
        .and_then(|r| if final_only { mse_final(&r, reference) } else { mse(&r, reference) })
        .ok()
        .filter(|e| e.is_finite())
        .unwrap_or(f64::INFINITY);
    TrajectoryOutcome { n_fcalls: calls, mse: err, wall_time_s: start.elapsed().as_secs_f64() }
}

/// Per-trajectory outcomes of one setting, in test-set order.
pub fn evaluate_setting(
    sys: &dyn OdeSystem,
    net: Option<&PseudoInvertibleNet>,
    spec: &SolverSpec,
    tests: &TestSet,
    final_only: bool,
) -> Vec<TrajectoryOutcome> {
    tests.ics.iter().zip(&tests.references).map(|(x0, r)| run_trajectory(sys, net, x0, r, spec, final_only)).collect()
}

/// Work-precision records for every spec, one per setting, in spec order.
pub fn work_precision(
    sys: &dyn OdeSystem,
    net: Option<&PseudoInvertibleNet>,
    specs: &[SolverSpec],
    tests: &TestSet,
    final_only: bool,
    seed: u64,
) -> Result<Vec<WorkPrecisionRecord>> {
    if let Some(net) = net {
        if net.n() != sys.dim() {
            return Err(Error::InvalidArgument("network and system dimensions differ".into()));
        }
    }
    for s in specs {
        s.validate()?;
    }
    let method = if net.is_some() { Method::Latent } else { Method::Original };
    Ok(specs
        .par_iter()
        .map(|spec| {
            let outcomes = evaluate_setting(sys, net, spec, tests, final_only);
            let n = outcomes.len() as f64;
            WorkPrecisionRecord {
                system: sys.name().to_string(),
                method,
                solver: spec.kind,
                setting: spec.setting(),
                n_fcalls: outcomes.iter().map(|o| o.n_fcalls).sum(),
                mse: outcomes.iter().map(|o| o.mse).sum::<f64>() / n,
                wall_time_s: outcomes.iter().map(|o| o.wall_time_s).sum(),
                seed,
            }
        })
        .collect())
}

/// Sorts by system, method, solver, setting and seed.
pub fn sort_records(records: &mut [WorkPrecisionRecord]) {
    records.sort_by(|a, b| {
        (&a.system, a.method, a.solver)
            .cmp(&(&b.system, b.method, b.solver))
            .then(a.setting.total_cmp(&b.setting))
            .then(a.seed.cmp(&b.seed))
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub mse: f64,
    pub n_fcalls: f64,
}

/// Pareto front of `(mse, n_fcalls)` over the records of one method, all
/// solvers pooled: sorted by increasing MSE with strictly decreasing calls.
/// Failed runs are ignored.
pub fn envelope(records: &[WorkPrecisionRecord], method: Method) -> Vec<EnvelopePoint> {
    let mut pts: Vec<EnvelopePoint> = records
        .iter()
        .filter(|r| r.method == method && r.mse.is_finite())
        .map(|r| EnvelopePoint { mse: r.mse.max(f64::MIN_POSITIVE), n_fcalls: r.n_fcalls as f64 })
        .collect();
    pts.sort_by(|a, b| a.mse.total_cmp(&b.mse).then(a.n_fcalls.total_cmp(&b.n_fcalls)));
    let mut front: Vec<EnvelopePoint> = Vec::new();
    for p in pts {
        if front.last().is_none_or(|q| p.n_fcalls < q.n_fcalls) {
            front.push(p);
        }
    }
    front
}

/// Calls needed to reach error `mse` on the envelope, interpolating
/// log-log between front points. `None` below the most accurate point.
pub fn calls_at(env: &[EnvelopePoint], mse: f64) -> Option<f64> {
    let first = env.first()?;
    if mse < first.mse {
        return None;
    }
    for w in env.windows(2) {
        let (a, b) = (w[0], w[1]);
        if mse < b.mse {
            let s = (mse.ln() - a.mse.ln()) / (b.mse.ln() - a.mse.ln());
            return Some((a.n_fcalls.ln() + s * (b.n_fcalls.ln() - a.n_fcalls.ln())).exp());
        }
    }
    env.last().map(|p| p.n_fcalls)
}

/// Original calls over latent calls at error `mse`.
pub fn speedup_at(original: &[EnvelopePoint], latent: &[EnvelopePoint], mse: f64) -> Option<f64> {
    Some(calls_at(original, mse)? / calls_at(latent, mse)?)
}

/// Largest speedup at any error in `[lo, hi]`, with the error it occurs at.
pub fn best_speedup(original: &[EnvelopePoint], latent: &[EnvelopePoint], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let mut levels = logspace(lo, hi, 201);
    levels.extend(original.iter().chain(latent).map(|p| p.mse).filter(|m| *m >= lo && *m <= hi));
    levels
        .into_iter()
        .filter_map(|m| speedup_at(original, latent, m).map(|s| (m, s)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;
    use crate::systems::{DomainBox, LinearSystem};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) struct Decay(pub DomainBox);

    impl OdeSystem for Decay {
        fn name(&self) -> &str {
            "decay"
        }
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![-x[0]])
        }
        fn rhs_dual(&self, x: &[Dual]) -> Result<Vec<Dual>> {
            Ok(vec![-x[0]])
        }
        fn domain(&self) -> &DomainBox {
            &self.0
        }
        fn horizon(&self) -> f64 {
            1.0
        }
        fn exact(&self, x0: &[f64], t: f64) -> Option<Vec<f64>> {
            Some(vec![x0[0] * (-t).exp()])
        }
        fn calls(&self) -> u64 {
            0
        }
    }

    #[test]
    fn euler_calls_per_trajectory() {
        let sys = Decay(DomainBox::symmetric(1, 1.0));
        let tests = make_test_set(&sys, 3, 1.5, 1.0, 11, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let specs: Vec<_> = [0.1, 0.05, 0.025].iter().map(|&dt| SolverSpec::euler(dt).with_grid(11)).collect();
        let recs = work_precision(&sys, None, &specs, &tests, false, 0).unwrap();
        let calls: Vec<u64> = recs.iter().map(|r| r.n_fcalls).collect();
        assert_eq!(calls, vec![30, 60, 120]);
        assert!(recs.windows(2).all(|w| w[1].mse < w[0].mse));
    }

    #[test]
    fn euler_mse_regression_on_linear_system() {
        let sys = LinearSystem::benchmark();
        let x0 = [1.0, 1.0, 1.0];
        let reference = reference_solution(&sys, &x0, 2.0, 101).unwrap();
        let out = run_trajectory(&sys, None, &x0, &reference, &SolverSpec::euler(0.08).with_grid(101), false);
        assert_eq!(out.n_fcalls, 25);
        let pinned = 0.022_674_881_639_402_56;
        assert!((out.mse - pinned).abs() <= 1e-9 * pinned, "{}", out.mse);
    }

    #[test]
    fn failed_runs_score_infinity() {
        let sys = LinearSystem::benchmark();
        let x0 = [1.0, 1.0, 1.0];
        let reference = reference_solution(&sys, &x0, 2.0, 11).unwrap();
        let out = run_trajectory(&sys, None, &x0, &reference, &SolverSpec::euler(0.2).with_grid(11), false);
        assert!(out.mse.is_finite());
        let blown = run_trajectory(&sys, None, &[1e300, 1e300, 1e300], &reference, &SolverSpec::euler(0.2).with_grid(11), false);
        assert_eq!(blown.mse, f64::INFINITY);
        assert!(blown.n_fcalls >= 1);
    }

    fn rec(method: Method, calls: u64, mse: f64) -> WorkPrecisionRecord {
        WorkPrecisionRecord {
            system: "s".into(),
            method,
            solver: SolverKind::Euler,
            setting: 0.1,
            n_fcalls: calls,
            mse,
            wall_time_s: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn envelope_keeps_pareto_points() {
        let recs = vec![
            rec(Method::Original, 100, 1e-6),
            rec(Method::Original, 200, 1e-5),
            rec(Method::Original, 10, 1e-2),
            rec(Method::Original, 50, 1e-4),
            rec(Method::Original, 5, f64::INFINITY),
            rec(Method::Latent, 1, 1e-9),
        ];
        let env = envelope(&recs, Method::Original);
        let pairs: Vec<(f64, f64)> = env.iter().map(|p| (p.mse, p.n_fcalls)).collect();
        assert_eq!(pairs, vec![(1e-6, 100.0), (1e-4, 50.0), (1e-2, 10.0)]);
        assert_eq!(calls_at(&env, 1e-7), None);
        assert!((calls_at(&env, 1e-5).unwrap() - (50.0f64 * 100.0).sqrt()).abs() < 1e-9);
        assert_eq!(calls_at(&env, 1.0), Some(10.0));
    }

    #[test]
    fn best_speedup_in_band() {
        let orig = vec![EnvelopePoint { mse: 1e-6, n_fcalls: 1000.0 }, EnvelopePoint { mse: 1e-2, n_fcalls: 100.0 }];
        let lat = vec![EnvelopePoint { mse: 1e-6, n_fcalls: 100.0 }, EnvelopePoint { mse: 1e-2, n_fcalls: 50.0 }];
        let (at, s) = best_speedup(&orig, &lat, 1e-6, 1e-2).unwrap();
        assert!((s - 10.0).abs() < 1e-9 && (at - 1e-6).abs() < 1e-18);
        assert!(best_speedup(&orig, &lat, 1e-9, 1e-8).is_none());
    }

    #[test]
    fn sort_order() {
        let mut recs = vec![rec(Method::Latent, 1, 1.0), rec(Method::Original, 1, 1.0)];
        recs[0].setting = 0.01;
        sort_records(&mut recs);
        assert_eq!(recs[0].method, Method::Original);
    }
}
