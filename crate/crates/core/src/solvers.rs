//! Explicit ODE integrators with exact right-hand-side call accounting.
//!
//! All runs report their states on a uniform output grid. Fixed-step
//! methods interpolate with cubic Hermite polynomials built from the stored
//! step states and slopes (the final interval, whose end slope is never
//! evaluated, falls back to the quadratic through `x_n`, `f_n`, `x_{n+1}`).
//! Dopri5 uses its own continuous extension.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Euler,
    Rk4,
    Dopri5,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Rk4 => "rk4",
            SolverKind::Dopri5 => "dopri5",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SolverKind::Euler),
            "rk4" => Ok(SolverKind::Rk4),
            "dopri5" => Ok(SolverKind::Dopri5),
            other => Err(Error::InvalidArgument(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub kind: SolverKind,
    /// Step size for the fixed-step methods.
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Number of uniformly spaced output samples, endpoints included.
    pub grid_points: usize,
}

impl SolverSpec {
    pub const DEFAULT_GRID: usize = 101;
    pub const DEFAULT_MAX_STEPS: usize = 2_000_000;

    pub fn euler(dt: f64) -> Self {
        Self::fixed(SolverKind::Euler, dt)
    }

    pub fn rk4(dt: f64) -> Self {
        Self::fixed(SolverKind::Rk4, dt)
    }

    fn fixed(kind: SolverKind, dt: f64) -> Self {
        Self { kind, dt, rtol: 1e-6, atol: 1e-6, max_steps: Self::DEFAULT_MAX_STEPS, grid_points: Self::DEFAULT_GRID }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self {
            kind: SolverKind::Dopri5,
            dt: f64::NAN,
            rtol,
            atol,
            max_steps: Self::DEFAULT_MAX_STEPS,
            grid_points: Self::DEFAULT_GRID,
        }
    }

    pub fn with_grid(mut self, points: usize) -> Self {
        self.grid_points = points;
        self
    }

    /// Step size for fixed-step kinds, tolerance for Dopri5.
    pub fn setting(&self) -> f64 {
        match self.kind {
            SolverKind::Dopri5 => self.rtol,
            _ => self.dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        match self.kind {
            SolverKind::Dopri5 if !(self.rtol > 0.0 && self.atol > 0.0) => bad("rtol and atol must be positive"),
            SolverKind::Euler | SolverKind::Rk4 if !(self.dt > 0.0 && self.dt.is_finite()) => bad("dt must be positive"),
            _ if self.grid_points < 2 => bad("output grid needs at least two points"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub times: Vec<f64>,
    /// One state per output time.
    pub states: Vec<Vec<f64>>,
    /// Right-hand-side evaluations made by the integrator.
    pub n_fcalls: u64,
    /// Evaluations of the underlying system (equal to `n_fcalls` for a
    /// direct simulation, reported separately for latent runs).
    pub n_base_fcalls: u64,
    pub n_steps: u64,
    pub n_rejected: u64,
    pub wall_time: f64,
}

/// Uniform output grid on `[t0, tf]`.
pub fn output_grid(t0: f64, tf: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| if i + 1 == points { tf } else { t0 + (tf - t0) * i as f64 / (points - 1) as f64 })
        .collect()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn check_finite(x: &[f64], t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t })
    }
}

/// Integrates the autonomous system `ẋ = rhs(x)` from `t0` to `tf`.
pub fn integrate<F>(mut rhs: F, x0: &[f64], t0: f64, tf: f64, spec: &SolverSpec) -> Result<SolveResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    spec.validate()?;
    if !(tf > t0) {
        return Err(Error::InvalidArgument("tf must exceed t0".into()));
    }
    check_finite(x0, t0)?;
    let start = Instant::now();
    let mut calls = 0u64;
    let mut counted = |x: &[f64]| {
        calls += 1;
        rhs(x)
    };
    let grid = output_grid(t0, tf, spec.grid_points);
    let (states, n_steps, n_rejected) = match spec.kind {
        SolverKind::Euler | SolverKind::Rk4 => {
            let (s, n) = fixed_step(&mut counted, x0, t0, tf, spec, &grid)?;
            (s, n, 0)
        }
        SolverKind::Dopri5 => dopri5(&mut counted, x0, t0, tf, spec, &grid)?,
    };
    Ok(SolveResult {
        times: grid,
        states,
        n_fcalls: calls,
        n_base_fcalls: calls,
        n_steps,
        n_rejected,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn fixed_step<F>(rhs: &mut F, x0: &[f64], t0: f64, tf: f64, spec: &SolverSpec, grid: &[f64]) -> Result<(Vec<Vec<f64>>, u64)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let span = tf - t0;
    let n = ((span / spec.dt) - 1e-9).ceil().max(1.0) as usize;
    if n > spec.max_steps {
        return Err(Error::MaxSteps { t: t0 });
    }
    let h = span / n as f64;
    if h < 1e-14 * span {
        return Err(Error::StepUnderflow { t: t0 });
    }
    let d = x0.len();
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut fs: Vec<Vec<f64>> = Vec::with_capacity(n);
    xs.push(x0.to_vec());
    for step in 0..n {
        let x = &xs[step];
        let t = t0 + step as f64 * h;
        let k1 = rhs(x)?;
        let mut next = x.clone();
        match spec.kind {
            SolverKind::Euler => axpy(&mut next, h, &k1),
            _ => {
                let mut tmp = x.clone();
                axpy(&mut tmp, 0.5 * h, &k1);
                let k2 = rhs(&tmp)?;
                tmp.copy_from_slice(x);
                axpy(&mut tmp, 0.5 * h, &k2);
                let k3 = rhs(&tmp)?;
                tmp.copy_from_slice(x);
                axpy(&mut tmp, h, &k3);
                let k4 = rhs(&tmp)?;
                for i in 0..d {
                    next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        check_finite(&next, t + h)?;
        fs.push(k1);
        xs.push(next);
    }

    let states = grid
        .iter()
        .map(|&t| {
            let pos = ((t - t0) / h).clamp(0.0, n as f64);
            let i = (pos.floor() as usize).min(n - 1);
            let s = pos - i as f64;
            if s == 0.0 {
                return xs[i].clone();
            }
            if s == 1.0 {
                return xs[i + 1].clone();
            }
            let (xa, xb, fa) = (&xs[i], &xs[i + 1], &fs[i]);
            match fs.get(i + 1) {
                Some(fb) => {
                    let s2 = s * s;
                    let s3 = s2 * s;
                    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                    let h10 = s3 - 2.0 * s2 + s;
                    let h01 = -2.0 * s3 + 3.0 * s2;
                    let h11 = s3 - s2;
                    (0..d).map(|k| h00 * xa[k] + h10 * h * fa[k] + h01 * xb[k] + h11 * h * fb[k]).collect()
                }
                None => (0..d).map(|k| xa[k] + s * h * fa[k] + s * s * (xb[k] - xa[k] - h * fa[k])).collect(),
            }
        })
        .collect();
    Ok((states, n as u64))
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

fn dopri5<F>(
    rhs: &mut F,
    x0: &[f64],
    t0: f64,
    tf: f64,
    spec: &SolverSpec,
    grid: &[f64],
) -> Result<(Vec<Vec<f64>>, u64, u64)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let d = x0.len();
    let span = tf - t0;
    let (rtol, atol) = (spec.rtol, spec.atol);
    let mut out = Vec::with_capacity(grid.len());
    let mut next_out = 0;
    while next_out < grid.len() && grid[next_out] <= t0 {
        out.push(x0.to_vec());
        next_out += 1;
    }

    let mut x = x0.to_vec();
    let mut k1 = rhs(&x)?;
    check_finite(&k1, t0)?;

    let scaled_rms = |v: &[f64], x: &[f64]| {
        (v.iter().zip(x).map(|(a, b)| (a / (atol + rtol * b.abs())).powi(2)).sum::<f64>() / d as f64).sqrt()
    };
    let d0 = scaled_rms(&x, &x);
    let d1 = scaled_rms(&k1, &x);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
    h = h.min(span);

    let (mut t, mut steps, mut rejected) = (t0, 0u64, 0u64);
    let mut tmp = vec![0.0; d];
    while t < tf {
        if steps + rejected >= spec.max_steps as u64 {
            return Err(Error::MaxSteps { t });
        }
        if h < 1e-14 * span {
            return Err(Error::StepUnderflow { t });
        }
        let last = t + h >= tf - 1e-14 * span;
        if last {
            h = tf - t;
        }
        let stage = |tmp: &mut Vec<f64>, coeffs: &[(f64, &Vec<f64>)]| {
            tmp.copy_from_slice(&x);
            for (c, k) in coeffs {
                axpy(tmp, h * c, k);
            }
        };
        stage(&mut tmp, &[(A21, &k1)]);
        let k2 = rhs(&tmp)?;
        stage(&mut tmp, &[(A31, &k1), (A32, &k2)]);
        let k3 = rhs(&tmp)?;
        stage(&mut tmp, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        let k4 = rhs(&tmp)?;
        stage(&mut tmp, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        let k5 = rhs(&tmp)?;
        stage(&mut tmp, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        let k6 = rhs(&tmp)?;
        let mut xnew = x.clone();
        for i in 0..d {
            xnew[i] += h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let k7 = rhs(&xnew)?;

        let mut err = 0.0;
        for i in 0..d {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = atol + rtol * x[i].abs().max(xnew[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / d as f64).sqrt();
        let _ = (C2, C3, C4, C5);

        if err.is_finite() && err <= 1.0 {
            check_finite(&xnew, t + h)?;
            let t_new = if last { tf } else { t + h };
            // continuous extension on [t, t_new]
            while next_out < grid.len() && grid[next_out] <= t_new {
                let theta = ((grid[next_out] - t) / h).clamp(0.0, 1.0);
                let th1 = 1.0 - theta;
                let sample: Vec<f64> = (0..d)
                    .map(|i| {
                        let r2 = xnew[i] - x[i];
                        let r3 = h * k1[i] - r2;
                        let r4 = r2 - h * k7[i] - r3;
                        let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                        x[i] + theta * (r2 + th1 * (r3 + theta * (r4 + th1 * r5)))
                    })
                    .collect();
                out.push(sample);
                next_out += 1;
            }
            x = xnew;
            k1 = k7;
            t = t_new;
            steps += 1;
            let fac = if err == 0.0 { FAC_MAX } else { (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX) };
            h *= fac;
        } else {
            rejected += 1;
            let fac = if err.is_finite() { (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0) } else { FAC_MIN };
            h *= fac;
        }
    }
    while out.len() < grid.len() {
        out.push(x.clone());
    }
    Ok((out, steps, rejected))
}

/// Mean over grid points and components of squared differences.
pub fn mse(result: &SolveResult, reference: &SolveResult) -> Result<f64> {
    check_grids(result, reference)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (a, b) in result.states.iter().zip(&reference.states) {
        for (x, y) in a.iter().zip(b) {
            acc += (x - y).powi(2);
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Squared error of the final sample only, averaged over components.
pub fn mse_final(result: &SolveResult, reference: &SolveResult) -> Result<f64> {
    check_grids(result, reference)?;
    let a = result.states.last().expect("non-empty grid");
    let b = reference.states.last().expect("non-empty grid");
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

fn check_grids(a: &SolveResult, b: &SolveResult) -> Result<()> {
    if a.times.len() != b.times.len() {
        return Err(Error::GridMismatch(format!("{} vs {} samples", a.times.len(), b.times.len())));
    }
    let scale = a.times.last().copied().unwrap_or(1.0).abs().max(1.0);
    if a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12 * scale) {
        return Err(Error::GridMismatch("sample times differ".into()));
    }
    if a.states.first().map(Vec::len) != b.states.first().map(Vec::len) {
        return Err(Error::GridMismatch("state dimensions differ".into()));
    }
    Ok(())
}
