//! Benchmark ODE systems and their reference oracles.

mod linear;
mod vlm;
mod vortex;

pub use linear::{LinearSystem, BENCHMARK_MATRIX};
pub use vlm::{Panel, VlmConfig, VlmSystem};
pub use vortex::{VortexConfig, VortexSystem};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::autodiff::{Dual, Scalar};
use crate::error::Result;

/// Per-coordinate sampling bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Box with the same center and half-widths multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                let c = 0.5 * (lo + hi);
                let h = 0.5 * (hi - lo) * factor;
                (c - h, c + h)
            })
            .unzip();
        Self { lower, upper }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo })
            .collect()
    }
}

/// Atomic evaluation counter.
#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn tick(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }
}

impl Clone for CallCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

/// An autonomous ODE `ẋ = f(x)`.
pub trait OdeSystem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn rhs(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// `f` on dual numbers, so `J_f(x)·v` comes out in the tangents.
    fn rhs_dual(&self, x: &[Dual]) -> Result<Vec<Dual>>;

    /// Box initial conditions and uniform training samples are drawn from.
    fn domain(&self) -> &DomainBox;

    /// Default simulation horizon; runs cover `[0, horizon]`.
    fn horizon(&self) -> f64;

    /// Closed-form solution, when one exists.
    fn exact(&self, _x0: &[f64], _t: f64) -> Option<Vec<f64>> {
        None
    }

    /// Number of `rhs`/`rhs_dual` evaluations so far.
    fn calls(&self) -> u64;
}

/// Scalars an `OdeSystem` can be evaluated on.
pub trait SystemScalar: Scalar {
    fn eval_rhs(sys: &dyn OdeSystem, x: &[Self]) -> Result<Vec<Self>>;
}

impl SystemScalar for f64 {
    fn eval_rhs(sys: &dyn OdeSystem, x: &[Self]) -> Result<Vec<Self>> {
        sys.rhs(x)
    }
}

impl SystemScalar for Dual {
    fn eval_rhs(sys: &dyn OdeSystem, x: &[Self]) -> Result<Vec<Self>> {
        sys.rhs_dual(x)
    }
}

/// Dense Jacobian `J_f(x)` (row-major `n×n`), one forward-mode pass per column.
pub fn jacobian(sys: &dyn OdeSystem, x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let mut jac = vec![0.0; n * n];
    for c in 0..n {
        let xs: Vec<Dual> =
            x.iter().enumerate().map(|(i, &v)| Dual::new(v, if i == c { 1.0 } else { 0.0 })).collect();
        let col = sys.rhs_dual(&xs)?;
        for (r, d) in col.iter().enumerate() {
            jac[r * n + c] = d.deriv;
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scaled_box_keeps_center() {
        let b = DomainBox::new(vec![0.0, -2.0], vec![2.0, 2.0]).scaled(1.5);
        assert_eq!(b.lower, vec![-0.5, -3.0]);
        assert_eq!(b.upper, vec![2.5, 3.0]);
    }

    #[test]
    fn samples_stay_inside() {
        let b = DomainBox::symmetric(3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(b.contains(&b.sample(&mut rng)));
        }
    }

    #[test]
    fn jacobian_of_linear_system_is_its_matrix() {
        let sys = LinearSystem::benchmark();
        let j = jacobian(&sys, &[0.3, -0.2, 0.9]).unwrap();
        let flat: Vec<f64> = BENCHMARK_MATRIX.iter().flatten().copied().collect();
        assert_eq!(j, flat);
    }
}
