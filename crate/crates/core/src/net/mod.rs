//! Pseudo-invertible network: a trainable tall lift `A` followed by an
//! exactly invertible stack of affine coupling layers `φ`.
//!
//! `encode(x) = φ(A x)` and `decode(z) = A⁺ φ⁻¹(z)`.

mod checkpoint;
mod coupling;
mod lift;
mod mlp;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use coupling::{CouplingLayer, Mask};
pub use lift::{LiftMatrix, MIN_SINGULAR_VALUE};
pub use mlp::{Dense, Mlp};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};

/// Architecture of a pseudo-invertible network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// State dimension.
    pub n: usize,
    /// Latent dimension, strictly larger than `n`.
    pub m: usize,
    pub layers: usize,
    /// Hidden units per subnet layer.
    pub width: usize,
    /// Hidden layers per subnet.
    pub depth: usize,
    /// Bound on the log-scale of every coupling layer.
    pub clamp: f64,
}

impl NetConfig {
    pub const DEFAULT_CLAMP: f64 = 5.0;
    /// Standard deviation of the lower block of a freshly initialized lift.
    pub const LIFT_INIT_STD: f64 = 0.1;

    pub fn new(n: usize, m: usize, layers: usize, width: usize, depth: usize) -> Self {
        Self { n, m, layers, width, depth, clamp: Self::DEFAULT_CLAMP }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m < self.n || self.m < 2 {
            return Err(Error::InvalidArgument(format!(
                "latent dimension {} must be at least the state dimension {} and at least 2",
                self.m, self.n
            )));
        }
        if self.width == 0 {
            return Err(Error::InvalidArgument("subnet width must be positive".into()));
        }
        if !(self.clamp > 0.0 && self.clamp.is_finite()) {
            return Err(Error::InvalidArgument("clamp must be positive".into()));
        }
        Ok(())
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        let mut count = self.m * self.n;
        for l in 0..self.layers {
            let mask = Mask::alternating(self.m, l);
            let (na, nb) = (mask.a.len(), mask.b.len());
            let mut fan_in = na;
            let mut subnet = 0;
            for _ in 0..self.depth {
                subnet += fan_in * self.width + self.width;
                fan_in = self.width;
            }
            subnet += fan_in * nb + nb;
            count += 2 * subnet;
        }
        count
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoInvertibleNet {
    cfg: NetConfig,
    lift: LiftMatrix,
    layers: Vec<CouplingLayer>,
}

impl PseudoInvertibleNet {
    /// Training initialization: `A = [I; G]`, random hidden layers and zero
    /// output layers, so `φ` starts as the identity.
    pub fn new<R: Rng + ?Sized>(cfg: NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let lift = LiftMatrix::perturbed_identity(cfg.n, cfg.m, NetConfig::LIFT_INIT_STD, rng)?;
        let layers = (0..cfg.layers)
            .map(|l| CouplingLayer::new(cfg.m, l, cfg.width, cfg.depth, cfg.clamp, rng))
            .collect();
        Ok(Self { cfg, lift, layers })
    }

    /// `A = [I; 0]` and every parameter of `φ` zero.
    pub fn identity(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let lift = LiftMatrix::identity(cfg.n, cfg.m)?;
        let layers = (0..cfg.layers).map(|l| CouplingLayer::zeros(cfg.m, l, cfg.width, cfg.depth, cfg.clamp)).collect();
        Ok(Self { cfg, lift, layers })
    }

    /// Training initialization with the subnet output layers also drawn at
    /// random (uniform in `±scale/√fan_in`), so `φ` is a generic nonlinear map.
    pub fn random<R: Rng + ?Sized>(cfg: NetConfig, scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::new(cfg, rng)?;
        for layer in &mut net.layers {
            for sub in [&mut layer.scale_net, &mut layer.shift_net] {
                let last = sub.layers.last_mut().expect("output layer");
                *last = Dense::uniform(last.input(), last.output(), scale, rng);
            }
        }
        Ok(net)
    }

    /// Builds a network from explicit parts (lift given by its matrix).
    pub fn from_parts(cfg: NetConfig, a: Array2<f64>, layers: Vec<CouplingLayer>) -> Result<Self> {
        cfg.validate()?;
        if a.dim() != (cfg.m, cfg.n) || layers.len() != cfg.layers {
            return Err(Error::InvalidArgument("network parts do not match the configuration".into()));
        }
        Ok(Self { cfg, lift: LiftMatrix::new(a)?, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn n(&self) -> usize {
        self.cfg.n
    }

    pub fn m(&self) -> usize {
        self.cfg.m
    }

    pub fn lift(&self) -> &LiftMatrix {
        &self.lift
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    /// `A x`.
    pub fn lift_apply<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        matvec(self.lift.matrix(), x)
    }

    /// `A⁺ u`.
    pub fn project<T: Scalar>(&self, u: &[T]) -> Vec<T> {
        matvec(self.lift.pseudo_inverse(), u)
    }

    pub fn phi<T: Scalar>(&self, u: &[T]) -> Result<Vec<T>> {
        let mut h = u.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            check_layer(&h, l)?;
        }
        Ok(h)
    }

    pub fn phi_inverse<T: Scalar>(&self, z: &[T]) -> Result<Vec<T>> {
        let mut h = z.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            h = layer.inverse(&h);
            check_layer(&h, l)?;
        }
        Ok(h)
    }

    /// `φ(A x)`.
    pub fn encode<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_len(x.len(), self.cfg.n)?;
        self.phi(&self.lift_apply(x))
    }

    /// `A⁺ φ⁻¹(z)`.
    pub fn decode<T: Scalar>(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z.len(), self.cfg.m)?;
        Ok(self.project(&self.phi_inverse(z)?))
    }

    /// `J_φ(u)·w` by forward-mode duals through every coupling layer.
    pub fn phi_jvp_generic<T: Scalar>(&self, u: &[T], w: &[T]) -> Result<Vec<T>> {
        self.check_len(u.len(), self.cfg.m)?;
        self.check_len(w.len(), self.cfg.m)?;
        let xs: Vec<Dual<T>> = u.iter().zip(w).map(|(&a, &b)| Dual::new(a, b)).collect();
        Ok(self.phi(&xs)?.into_iter().map(|d| d.deriv).collect())
    }

    pub fn phi_jvp(&self, u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let out = self.phi_jvp_generic(u, w)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "phi_jvp".into() });
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.cfg.param_count()
    }

    /// All parameters in declaration order: `A` row-major, then per coupling
    /// layer the scale subnet and the shift subnet, each as
    /// (weight row-major, bias) per dense layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(self.lift.matrix().iter());
        for layer in &self.layers {
            for sub in [&layer.scale_net, &layer.shift_net] {
                for d in &sub.layers {
                    out.extend(d.weight.iter());
                    out.extend(d.bias.iter());
                }
            }
        }
        out
    }

    /// Overwrites all parameters (same order as [`params`](Self::params))
    /// and refreshes the pseudo-inverse.
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut rest = values;
        let mut take = |k: usize| {
            let (head, tail) = rest.split_at(k);
            rest = tail;
            head
        };
        let nm = self.cfg.m * self.cfg.n;
        self.lift.set_entries(take(nm));
        for layer in &mut self.layers {
            for sub in [&mut layer.scale_net, &mut layer.shift_net] {
                for d in &mut sub.layers {
                    let w = take(d.weight.len());
                    d.weight.as_slice_mut().expect("standard layout").copy_from_slice(w);
                    let b = take(d.bias.len());
                    d.bias.as_slice_mut().expect("standard layout").copy_from_slice(b);
                }
            }
        }
        self.lift.refresh_pseudo_inverse()
    }

    fn check_len(&self, got: usize, want: usize) -> Result<()> {
        if got == want {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("expected a vector of length {want}, got {got}")))
        }
    }
}

fn matvec<T: Scalar>(m: &Array2<f64>, x: &[T]) -> Vec<T> {
    m.rows().into_iter().map(|row| row.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + b * a)).collect()
}

fn check_layer<T: Scalar>(h: &[T], layer: usize) -> Result<()> {
    if h.iter().all(Scalar::is_finite) {
        Ok(())
    } else {
        Err(Error::LayerOverflow { layer })
    }
}
