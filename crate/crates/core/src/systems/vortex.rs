use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{CallCounter, DomainBox, OdeSystem};
use crate::autodiff::{Dual, Scalar};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VortexConfig {
    /// Signed circulation of each particle; the particle count is its length.
    pub circulations: Vec<f64>,
    /// Softening radius added in quadrature to every pair distance.
    pub core_radius: f64,
    /// Initial positions are sampled from `[−half_width, half_width]²`.
    pub half_width: f64,
    pub horizon: f64,
}

impl Default for VortexConfig {
    fn default() -> Self {
        Self { circulations: vec![1.0; 4], core_radius: 1e-3, half_width: 1.0, horizon: 12.0 }
    }
}

impl VortexConfig {
    pub fn particles(&self) -> usize {
        self.circulations.len()
    }
}

/// 2D point vortices: particle `i` moves with
/// `Σ_{j≠i} Γ_j (−Δy, Δx) / (2π (|r_ij|² + ε²))`, where `r_ij = p_i − p_j`.
#[derive(Debug)]
pub struct VortexSystem {
    cfg: VortexConfig,
    domain: DomainBox,
    counter: CallCounter,
    close_pairs: CallCounter,
}

impl VortexSystem {
    pub fn new(cfg: VortexConfig) -> Self {
        let domain = DomainBox::symmetric(2 * cfg.particles(), cfg.half_width);
        Self { cfg, domain, counter: CallCounter::default(), close_pairs: CallCounter::default() }
    }

    /// Two counter-rotating pairs stacked along x, the classical leapfrogging setup.
    pub fn leapfrog_preset() -> (Self, Vec<f64>) {
        let cfg = VortexConfig { circulations: vec![-1.0, 1.0, -1.0, 1.0], ..Default::default() };
        let x0 = vec![-0.5, 0.5, -0.5, -0.5, 0.0, 0.3, 0.0, -0.3];
        (Self::new(cfg), x0)
    }

    pub fn config(&self) -> &VortexConfig {
        &self.cfg
    }

    /// Number of pair evaluations closer than the core radius (diagnostic).
    pub fn close_encounters(&self) -> u64 {
        self.close_pairs.get()
    }

    fn velocities<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let p = self.cfg.particles();
        let eps2 = self.cfg.core_radius * self.cfg.core_radius;
        let mut out = vec![T::zero(); 2 * p];
        for i in 0..p {
            for j in 0..p {
                if i == j {
                    continue;
                }
                let dx = x[2 * i] - x[2 * j];
                let dy = x[2 * i + 1] - x[2 * j + 1];
                let r2 = dx * dx + dy * dy;
                if r2.real() < eps2 {
                    self.close_pairs.tick();
                }
                let k = (r2 + eps2).recip() * (self.cfg.circulations[j] / (2.0 * PI));
                out[2 * i] -= dy * k;
                out[2 * i + 1] += dx * k;
            }
        }
        out
    }

    /// `(Σ Γ_i x_i, Σ Γ_i y_i)`.
    pub fn linear_impulse(&self, x: &[f64]) -> (f64, f64) {
        self.cfg
            .circulations
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(a, b), (i, g)| (a + g * x[2 * i], b + g * x[2 * i + 1]))
    }

    /// Interaction energy `−(1/4π) Σ_{i<j} Γ_i Γ_j ln(|r_ij|² + ε²)`, exactly
    /// conserved by the softened dynamics.
    pub fn hamiltonian(&self, x: &[f64]) -> f64 {
        let p = self.cfg.particles();
        let eps2 = self.cfg.core_radius * self.cfg.core_radius;
        let mut h = 0.0;
        for i in 0..p {
            for j in i + 1..p {
                let dx = x[2 * i] - x[2 * j];
                let dy = x[2 * i + 1] - x[2 * j + 1];
                h -= self.cfg.circulations[i] * self.cfg.circulations[j] * (dx * dx + dy * dy + eps2).ln();
            }
        }
        h / (4.0 * PI)
    }
}

impl OdeSystem for VortexSystem {
    fn name(&self) -> &str {
        "vortex"
    }

    fn dim(&self) -> usize {
        2 * self.cfg.particles()
    }

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.counter.tick();
        Ok(self.velocities(x))
    }

    fn rhs_dual(&self, x: &[Dual]) -> Result<Vec<Dual>> {
        self.counter.tick();
        Ok(self.velocities(x))
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
