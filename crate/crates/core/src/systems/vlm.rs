//! Quasi-steady vortex-lattice aircraft in longitudinal flight.
//!
//! Body axes: x forward, y right, z down, origin at the centre of gravity.
//! State `[vx, vz, θ̇, θ]`. Each lifting surface is one chordwise row of
//! horseshoe vortices: bound segment on the quarter-chord line, control
//! point at three-quarter chord, trailing legs running to infinity along the
//! freestream direction seen at the CG.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CallCounter, DomainBox, OdeSystem};
use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::linalg::lu_solve;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VlmConfig {
    pub wing_span: f64,
    pub wing_chord: f64,
    pub wing_panels: usize,
    /// x of the wing quarter-chord line relative to the CG.
    pub wing_x: f64,
    pub wing_z: f64,
    pub wing_incidence_deg: f64,
    pub tail_span: f64,
    pub tail_chord: f64,
    /// Zero removes the tail.
    pub tail_panels: usize,
    /// Distance from the CG back to the tail quarter-chord line.
    pub tail_arm: f64,
    pub tail_z: f64,
    pub tail_incidence_deg: f64,
    pub mass: f64,
    pub iyy: f64,
    pub rho: f64,
    pub gravity: f64,
    pub min_airspeed: f64,
    /// Use `v̇z = Fz/m − θ̇·vx` instead of the standard `+θ̇·vx`.
    pub printed_vz_sign: bool,
    /// Half-widths of the initial-condition box around trim.
    pub box_half_widths: [f64; 4],
    pub horizon: f64,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            wing_span: 11.0,
            wing_chord: 1.1,
            wing_panels: 100,
            wing_x: -0.15,
            wing_z: 0.0,
            wing_incidence_deg: 3.0,
            tail_span: 2.75,
            tail_chord: 0.6,
            tail_panels: 25,
            tail_arm: 5.0,
            tail_z: -0.8,
            tail_incidence_deg: -2.0,
            mass: 700.0,
            iyy: 3000.0,
            rho: 1.225,
            gravity: 9.81,
            min_airspeed: 1.0,
            printed_vz_sign: false,
            box_half_widths: [5.0, 2.0, 0.2, 0.1],
            horizon: 6.0,
        }
    }
}

impl VlmConfig {
    /// Wing panel count `wing`, tail panels scaled to keep the default 4:1 ratio.
    pub fn with_panels(mut self, wing: usize) -> Self {
        self.wing_panels = wing;
        self.tail_panels = if self.tail_panels == 0 { 0 } else { (wing / 4).max(1) };
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    /// Bound-vortex end points (left → right).
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub control: [f64; 3],
    pub mid: [f64; 3],
    pub normal: [f64; 3],
    /// 0 for the wing, 1 for the tail.
    surface: usize,
    /// Index of the left trailing-leg node in the shared node list.
    left_node: usize,
}

#[derive(Debug)]
pub struct VlmSystem {
    cfg: VlmConfig,
    panels: Vec<Panel>,
    /// Trailing-leg start points, shared by neighbouring panels.
    nodes: Vec<[f64; 3]>,
    domain: DomainBox,
    trim: [f64; 4],
    counter: CallCounter,
}

type V3<T> = [T; 3];

#[inline]
fn cross<T: Scalar>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn dot<T: Scalar>(a: &V3<T>, b: &V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn lift<T: Scalar>(p: &[f64; 3]) -> V3<T> {
    [T::from_f64(p[0]), T::from_f64(p[1]), T::from_f64(p[2])]
}

const FOUR_PI: f64 = 4.0 * PI;

/// Unit-strength straight segment `p1 → p2`, velocity induced at `p`.
fn segment<T: Scalar>(p: &[f64; 3], p1: &[f64; 3], p2: &[f64; 3]) -> V3<T> {
    let r1 = [p[0] - p1[0], p[1] - p1[1], p[2] - p1[2]];
    let r2 = [p[0] - p2[0], p[1] - p2[1], p[2] - p2[2]];
    let c = cross(&r1, &r2);
    let c2 = dot(&c, &c);
    if c2 < 1e-20 {
        return [T::zero(); 3];
    }
    let n1 = dot(&r1, &r1).sqrt();
    let n2 = dot(&r2, &r2).sqrt();
    let r0 = [p2[0] - p1[0], p2[1] - p1[1], p2[2] - p1[2]];
    let k = (dot(&r0, &r1) / n1 - dot(&r0, &r2) / n2) / (FOUR_PI * c2);
    [T::from_f64(c[0] * k), T::from_f64(c[1] * k), T::from_f64(c[2] * k)]
}

/// Unit-strength semi-infinite line from `start` along unit direction `d`.
fn semi_infinite<T: Scalar>(p: &[f64; 3], start: &[f64; 3], d: &V3<T>) -> V3<T> {
    let r: V3<T> = lift(&[p[0] - start[0], p[1] - start[1], p[2] - start[2]]);
    let c = cross(d, &r);
    let c2 = dot(&c, &c);
    if c2.real() < 1e-20 {
        return [T::zero(); 3];
    }
    let rn = dot(&r, &r).sqrt();
    let k = (dot(d, &r) / rn + 1.0) / (c2 * FOUR_PI);
    [c[0] * k, c[1] * k, c[2] * k]
}

/// Solution of the lattice at one state.
pub struct VlmSolution<T> {
    pub circulation: Vec<T>,
    pub fx: T,
    pub fz: T,
    pub my: T,
}

impl VlmSystem {
    /// Builds the lattice and solves for the trim state that centres the
    /// initial-condition box.
    pub fn new(cfg: VlmConfig) -> Result<Self> {
        if cfg.wing_panels == 0 {
            return Err(Error::InvalidArgument("wing needs at least one panel".into()));
        }
        let mut sys = Self::new_layout(cfg);
        let trim = sys.find_trim([40.0, 2.0, 0.0, 0.03])?;
        let hw = sys.cfg.box_half_widths;
        sys.domain = DomainBox::new(
            (0..4).map(|i| trim[i] - hw[i]).collect(),
            (0..4).map(|i| trim[i] + hw[i]).collect(),
        );
        sys.trim = trim;
        sys.counter.reset();
        Ok(sys)
    }

    /// Lattice geometry only; the trim state and box are left at zero.
    pub fn new_layout(cfg: VlmConfig) -> Self {
        let mut panels = Vec::new();
        let mut nodes = Vec::new();
        let mut surfaces = vec![(cfg.wing_span, cfg.wing_chord, cfg.wing_panels, cfg.wing_x, cfg.wing_z, cfg.wing_incidence_deg)];
        if cfg.tail_panels > 0 {
            surfaces.push((cfg.tail_span, cfg.tail_chord, cfg.tail_panels, -cfg.tail_arm, cfg.tail_z, cfg.tail_incidence_deg));
        }
        for (s, &(span, chord, count, x_qc, z_qc, inc_deg)) in surfaces.iter().enumerate() {
            let inc = inc_deg.to_radians();
            // chord direction leading → trailing edge, nose-up incidence drops the trailing edge
            let back = [-inc.cos(), 0.0, inc.sin()];
            let normal = [-inc.sin(), 0.0, -inc.cos()];
            let first_node = nodes.len();
            for k in 0..=count {
                let y = -span / 2.0 + span * k as f64 / count as f64;
                nodes.push([x_qc, y, z_qc]);
            }
            for k in 0..count {
                let a = nodes[first_node + k];
                let b = nodes[first_node + k + 1];
                let mid = [x_qc, 0.5 * (a[1] + b[1]), z_qc];
                let control = [mid[0] + 0.5 * chord * back[0], mid[1], mid[2] + 0.5 * chord * back[2]];
                panels.push(Panel { a, b, control, mid, normal, surface: s, left_node: first_node + k });
            }
        }
        Self {
            cfg,
            panels,
            nodes,
            domain: DomainBox::symmetric(4, 1.0),
            trim: [0.0; 4],
            counter: CallCounter::default(),
        }
    }

    pub fn config(&self) -> &VlmConfig {
        &self.cfg
    }

    pub fn panels(&self) -> &[Panel] {
        &self.panels
    }

    /// Steady-glide equilibrium `[vx, vz, 0, θ]`.
    pub fn trim(&self) -> [f64; 4] {
        self.trim
    }

    /// Air velocity relative to body point `p`: `−(v + ω × p)`.
    fn relative_air<T: Scalar>(u: T, w: T, q: T, p: &[f64; 3]) -> V3<T> {
        [-u - q * p[2], T::zero(), -w + q * p[0]]
    }

    /// Velocity at `p` induced by unit-strength horseshoe `j`, given per-node
    /// trailing-leg velocities at `p`.
    fn horseshoe<T: Scalar>(&self, j: usize, p: &[f64; 3], legs: &[V3<T>], include_bound: bool) -> V3<T> {
        let panel = &self.panels[j];
        let (la, lb) = (&legs[panel.left_node], &legs[panel.left_node + 1]);
        let mut v = [lb[0] - la[0], lb[1] - la[1], lb[2] - la[2]];
        if include_bound {
            let s: V3<T> = segment(p, &panel.a, &panel.b);
            for i in 0..3 {
                v[i] += s[i];
            }
        }
        v
    }

    fn legs_at<T: Scalar>(&self, p: &[f64; 3], d: &V3<T>) -> Vec<V3<T>> {
        self.nodes.iter().map(|n| semi_infinite(p, n, d)).collect()
    }

    /// Builds and solves the flow-tangency system, then sums Kutta-Joukowski
    /// forces and pitching moment about the CG. Gravity is not included.
    pub fn solve_forces<T: Scalar>(&self, x: &[T]) -> Result<VlmSolution<T>> {
        let (u, w, q) = (x[0], x[1], x[2]);
        let speed = (u * u + w * w).sqrt();
        if !(speed.real() > self.cfg.min_airspeed) {
            return Err(Error::StallGuard { airspeed: speed.real() });
        }
        let d: V3<T> = [-u / speed, T::zero(), -w / speed];
        let np = self.panels.len();

        let mut mat = Vec::with_capacity(np * np);
        let mut rhs = Vec::with_capacity(np);
        for pi in &self.panels {
            let legs = self.legs_at(&pi.control, &d);
            let n: V3<T> = lift(&pi.normal);
            for j in 0..np {
                mat.push(dot(&self.horseshoe(j, &pi.control, &legs, true), &n));
            }
            rhs.push(-dot(&Self::relative_air(u, w, q, &pi.control), &n));
        }
        let gamma = lu_solve(mat, rhs, 1e-12)?;

        let (mut fx, mut fz, mut my) = (T::zero(), T::zero(), T::zero());
        for (j, pj) in self.panels.iter().enumerate() {
            let legs = self.legs_at(&pj.mid, &d);
            let mut vloc = Self::relative_air(u, w, q, &pj.mid);
            for k in 0..np {
                let v = self.horseshoe(k, &pj.mid, &legs, k != j);
                for i in 0..3 {
                    vloc[i] += v[i] * gamma[k];
                }
            }
            let l: V3<T> = lift(&[pj.b[0] - pj.a[0], pj.b[1] - pj.a[1], pj.b[2] - pj.a[2]]);
            let f = cross(&vloc, &l);
            let scale = gamma[j] * self.cfg.rho;
            let (fxj, fzj) = (f[0] * scale, f[2] * scale);
            fx += fxj;
            fz += fzj;
            // (r × F)_y = r_z F_x − r_x F_z
            my += fxj * pj.mid[2] - fzj * pj.mid[0];
        }
        Ok(VlmSolution { circulation: gamma, fx, fz, my })
    }

    fn eom<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        let sol = self.solve_forces(x)?;
        let (u, w, q, th) = (x[0], x[1], x[2], x[3]);
        let mg = self.cfg.mass * self.cfg.gravity;
        let fx = sol.fx - th.sin() * mg;
        let fz = sol.fz + th.cos() * mg;
        let coupling = if self.cfg.printed_vz_sign { -(q * u) } else { q * u };
        Ok(vec![fx / self.cfg.mass - q * w, fz / self.cfg.mass + coupling, sol.my / self.cfg.iyy, q])
    }

    /// Newton iteration on `(vx, vz, θ)` with `θ̇ = 0` for `v̇x = v̇z = θ̈ = 0`.
    pub fn find_trim(&self, guess: [f64; 4]) -> Result<[f64; 4]> {
        let mut s = [guess[0], guess[1], guess[3]];
        let state = |s: &[f64; 3]| [s[0], s[1], 0.0, s[2]];
        for _ in 0..60 {
            let x = state(&s);
            let r = self.eom(&x)?;
            let res = [r[0], r[1], r[2]];
            let norm = res.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if norm < 1e-11 {
                return Ok(x);
            }
            let mut jac = vec![0.0; 9];
            for (c, slot) in [0usize, 1, 3].iter().enumerate() {
                let xd: Vec<Dual> =
                    x.iter().enumerate().map(|(i, &v)| Dual::new(v, if i == *slot { 1.0 } else { 0.0 })).collect();
                let col = self.eom(&xd)?;
                for r in 0..3 {
                    jac[r * 3 + c] = col[r].deriv;
                }
            }
            let step = lu_solve(jac, res.iter().map(|v| -v).collect(), 1e-300)?;
            let mut lambda = 1.0;
            loop {
                let trial = [s[0] + lambda * step[0], s[1] + lambda * step[1], s[2] + lambda * step[2]];
                let ok = self
                    .eom(&state(&trial))
                    .map(|r| r[..3].iter().map(|v| v.abs()).fold(0.0, f64::max) < norm)
                    .unwrap_or(false);
                if ok || lambda < 1e-4 {
                    s = trial;
                    break;
                }
                lambda *= 0.5;
            }
        }
        Err(Error::InvalidArgument("trim iteration did not converge".into()))
    }

    /// Plain-text listing of the panel geometry.
    pub fn panel_listing(&self) -> String {
        let mut out = String::from("# surface panel ax ay az bx by bz cpx cpy cpz nx ny nz\n");
        for (i, p) in self.panels.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {} {} {} {} {} {}",
                if p.surface == 0 { "wing" } else { "tail" },
                i,
                p.a[0],
                p.a[1],
                p.a[2],
                p.b[0],
                p.b[1],
                p.b[2],
                p.control[0],
                p.control[1],
                p.control[2],
                p.normal[0],
                p.normal[1],
                p.normal[2]
            );
        }
        out
    }
}

impl OdeSystem for VlmSystem {
    fn name(&self) -> &str {
        "vlm"
    }

    fn dim(&self) -> usize {
        4
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.counter.tick();
        self.eom(x)
    }

    fn rhs_dual(&self, x: &[Dual]) -> Result<Vec<Dual>> {
        self.counter.tick();
        self.eom(x)
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn horizon(&self) -> f64 {
        self.cfg.horizon
    }

    fn calls(&self) -> u64 {
        self.counter.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(wing: usize, tail: usize) -> VlmConfig {
        VlmConfig {
            wing_panels: wing,
            tail_panels: tail,
            wing_incidence_deg: 0.0,
            tail_incidence_deg: 0.0,
            tail_z: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn tangent_flow_has_zero_circulation() {
        let sys = VlmSystem::new_layout(flat(20, 6));
        let sol = sys.solve_forces(&[35.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(sol.circulation.iter().all(|g| g.abs() < 1e-12));
        assert!(sol.fx.abs() < 1e-9 && sol.fz.abs() < 1e-9 && sol.my.abs() < 1e-9);
    }

    #[test]
    fn two_panel_force_bookkeeping() {
        let mut cfg = flat(1, 1);
        cfg.mass = 500.0;
        let sys = VlmSystem::new_layout(cfg);
        let theta: f64 = 0.1;
        let f = sys.eom(&[30.0, 0.0, 0.0, theta]).unwrap();
        // no aerodynamic load, so only gravity acts
        assert!((f[0] + 9.81 * theta.sin()).abs() < 1e-12);
        assert!((f[1] - 9.81 * theta.cos()).abs() < 1e-12);
        assert!(f[2].abs() < 1e-12);
        assert_eq!(f[3], 0.0);
    }

    #[test]
    fn forces_scale_linearly_with_density() {
        let sys = VlmSystem::new(VlmConfig { wing_panels: 20, tail_panels: 5, ..Default::default() }).unwrap();
        let mut dense_cfg = sys.config().clone();
        dense_cfg.rho *= 2.0;
        let dense = VlmSystem::new_layout(dense_cfg);
        let x = [38.0, 2.5, 0.05, 0.02];
        let a = sys.solve_forces(&x).unwrap();
        let b = dense.solve_forces(&x).unwrap();
        for (fa, fb) in [(a.fx, b.fx), (a.fz, b.fz), (a.my, b.my)] {
            assert!((fb - 2.0 * fa).abs() < 1e-12 * fa.abs().max(1.0));
        }
    }

    #[test]
    fn mirror_symmetry() {
        let sys = VlmSystem::new_layout(flat(24, 7));
        let a = sys.solve_forces(&[30.0, 2.0, 0.0, 0.1]).unwrap();
        let b = sys.solve_forces(&[30.0, -2.0, 0.0, -0.1]).unwrap();
        assert!((a.fz + b.fz).abs() < 1e-9 * a.fz.abs());
        assert!((a.my + b.my).abs() < 1e-9 * a.my.abs().max(1.0));
        assert!((a.fx - b.fx).abs() < 1e-9 * a.fx.abs().max(1.0));
    }

    #[test]
    fn lift_slope_close_to_lifting_line() {
        let cfg = VlmConfig { wing_panels: 100, tail_panels: 0, wing_incidence_deg: 0.0, ..Default::default() };
        let sys = VlmSystem::new_layout(cfg.clone());
        let v = 40.0;
        let alpha: f64 = 0.5f64.to_radians();
        let sol = sys.solve_forces(&[v * alpha.cos(), v * alpha.sin(), 0.0, 0.0]).unwrap();
        // lift is perpendicular to the freestream
        let lift = -(sol.fz * alpha.cos() - sol.fx * alpha.sin());
        let area = cfg.wing_span * cfg.wing_chord;
        let cl = lift / (0.5 * cfg.rho * v * v * area);
        let ar = cfg.wing_span / cfg.wing_chord;
        let expected = 2.0 * PI * ar / (ar + 2.0);
        assert!(((cl / alpha) - expected).abs() / expected < 0.15, "slope {} vs {}", cl / alpha, expected);
    }

    #[test]
    fn trim_is_an_equilibrium() {
        let sys = VlmSystem::new(VlmConfig { wing_panels: 20, tail_panels: 5, ..Default::default() }).unwrap();
        let f = sys.rhs(&sys.trim()).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-6), "{f:?}");
        let t = sys.trim();
        assert!(t[0] > 20.0 && t[0] < 80.0, "{t:?}");
    }

    #[test]
    fn stall_guard() {
        let sys = VlmSystem::new_layout(flat(4, 2));
        assert!(matches!(sys.rhs(&[0.5, 0.1, 0.0, 0.0]), Err(Error::StallGuard { .. })));
    }

    #[test]
    fn listing_has_one_line_per_panel() {
        let sys = VlmSystem::new_layout(flat(8, 2));
        assert_eq!(sys.panel_listing().lines().count(), 11);
    }
}
