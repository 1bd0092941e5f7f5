//! Latent dynamics obtained from the base system by the chain rule, and the
//! encode → integrate → decode simulation pipeline.
//!
//! For `z = φ(A x)` the latent right-hand side is
//! `ż = J_φ(u)·A·f(A⁺u)` with `u = φ⁻¹(z)`.

use std::time::Instant;

use crate::error::Result;
use crate::net::PseudoInvertibleNet;
use crate::solvers::{integrate, SolveResult, SolverSpec};
use crate::systems::{CallCounter, OdeSystem, SystemScalar};

pub struct LatentSystem<'a> {
    net: &'a PseudoInvertibleNet,
    base: &'a dyn OdeSystem,
    base_calls: CallCounter,
}

impl<'a> LatentSystem<'a> {
    pub fn new(net: &'a PseudoInvertibleNet, base: &'a dyn OdeSystem) -> Self {
        assert_eq!(net.n(), base.dim(), "network and system dimensions differ");
        Self { net, base, base_calls: CallCounter::default() }
    }

    pub fn net(&self) -> &PseudoInvertibleNet {
        self.net
    }

    pub fn base(&self) -> &dyn OdeSystem {
        self.base
    }

    /// Base-system evaluations made through this latent system.
    pub fn base_calls(&self) -> u64 {
        self.base_calls.get()
    }

    /// Latent right-hand side on any scalar the base system accepts. With
    /// dual inputs the tangent of the result is `J_ż(z)·v`.
    pub fn rhs_generic<T: SystemScalar>(&self, z: &[T]) -> Result<Vec<T>> {
        let u = self.net.phi_inverse(z)?;
        let x = self.net.project(&u);
        self.base_calls.tick();
        let f = T::eval_rhs(self.base, &x)?;
        let w = self.net.lift_apply(&f);
        self.net.phi_jvp_generic(&u, &w)
    }

    pub fn rhs(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.rhs_generic(z)
    }

    /// Encodes `x0`, integrates the latent system over `[t0, tf]` and decodes
    /// every output sample. `n_fcalls` counts latent right-hand-side calls,
    /// `n_base_fcalls` the base-system evaluations behind them.
    pub fn simulate(&self, x0: &[f64], t0: f64, tf: f64, spec: &SolverSpec) -> Result<SolveResult> {
        let start = Instant::now();
        let before = self.base_calls();
        let z0 = self.net.encode(x0)?;
        let mut res = integrate(|z| self.rhs(z), &z0, t0, tf, spec)?;
        res.states = res.states.iter().map(|z| self.net.decode(z)).collect::<Result<_>>()?;
        res.n_base_fcalls = self.base_calls() - before;
        res.wall_time = start.elapsed().as_secs_f64();
        Ok(res)
    }
}

/// Direct integration of the base system.
pub fn simulate_original(sys: &dyn OdeSystem, x0: &[f64], t0: f64, tf: f64, spec: &SolverSpec) -> Result<SolveResult> {
    integrate(|x| sys.rhs(x), x0, t0, tf, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{jvp, Dual};
    use crate::net::{CouplingLayer, NetConfig};
    use crate::systems::{LinearSystem, VortexSystem};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_net_lifts_base_rhs() {
        let sys = LinearSystem::benchmark();
        let net = PseudoInvertibleNet::identity(NetConfig::new(3, 5, 2, 4, 1)).unwrap();
        let lat = LatentSystem::new(&net, &sys);
        let x = [0.2, -0.3, 0.5];
        let f = sys.rhs(&x).unwrap();
        let zdot = lat.rhs(&net.encode(&x).unwrap()).unwrap();
        assert_eq!(zdot, vec![f[0], f[1], f[2], 0.0, 0.0]);
        assert_eq!(lat.base_calls(), 1);
    }

    #[test]
    fn stacked_identity_lift_duplicates_rhs() {
        let sys = LinearSystem::benchmark();
        let cfg = NetConfig::new(3, 6, 2, 4, 1);
        let a = Array2::from_shape_fn((6, 3), |(i, j)| if i % 3 == j { 1.0 } else { 0.0 });
        let layers = (0..2).map(|l| CouplingLayer::zeros(6, l, 4, 1, 5.0)).collect();
        let net = PseudoInvertibleNet::from_parts(cfg, a, layers).unwrap();
        let lat = LatentSystem::new(&net, &sys);
        let z = [0.1, 0.4, -0.2, 0.3, 0.0, 0.6];
        let mean: Vec<f64> = (0..3).map(|i| 0.5 * (z[i] + z[i + 3])).collect();
        let f = sys.rhs(&mean).unwrap();
        let zdot = lat.rhs(&z).unwrap();
        for i in 0..3 {
            assert!((zdot[i] - f[i]).abs() < 1e-12 && (zdot[i + 3] - f[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn latent_rhs_is_time_derivative_of_encoding() {
        let sys = LinearSystem::benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = PseudoInvertibleNet::random(NetConfig::new(3, 8, 3, 8, 2), 0.3, &mut rng).unwrap();
        let lat = LatentSystem::new(&net, &sys);
        let x0 = [0.5, -0.4, 0.9];
        let h = 1e-5;
        for &t in &[0.05, 0.3, 1.0] {
            let zp = net.encode(&sys.solution(&x0, t + h)).unwrap();
            let zm = net.encode(&sys.solution(&x0, t - h)).unwrap();
            let zdot = lat.rhs(&net.encode(&sys.solution(&x0, t)).unwrap()).unwrap();
            let scale = zdot.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for i in 0..8 {
                let fd = (zp[i] - zm[i]) / (2.0 * h);
                assert!((fd - zdot[i]).abs() <= 1e-5 * scale, "{fd} vs {}", zdot[i]);
            }
        }
    }

    #[test]
    fn dual_latent_rhs_matches_central_difference() {
        let (sys, x0) = VortexSystem::leapfrog_preset();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = PseudoInvertibleNet::random(NetConfig::new(8, 10, 2, 6, 2), 0.3, &mut rng).unwrap();
        let lat = LatentSystem::new(&net, &sys);
        let z = net.encode(&x0).unwrap();
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = jvp(|zs: &[Dual]| lat.rhs_generic(zs).unwrap(), &z, &v).unwrap();
        let eps = 1e-6;
        let at = |s: f64| lat.rhs(&z.iter().zip(&v).map(|(a, b)| a + s * b).collect::<Vec<_>>()).unwrap();
        let (p, m) = (at(eps), at(-eps));
        for i in 0..10 {
            let fd = (p[i] - m[i]) / (2.0 * eps);
            assert!((fd - d[i]).abs() <= 1e-6 * d[i].abs().max(1.0), "{fd} vs {}", d[i]);
        }
    }

    #[test]
    fn untrained_net_reproduces_direct_simulation() {
        let sys = LinearSystem::benchmark();
        let net = PseudoInvertibleNet::identity(NetConfig::new(3, 6, 2, 4, 1)).unwrap();
        let lat = LatentSystem::new(&net, &sys);
        let x0 = [1.0, 1.0, 1.0];
        let spec = SolverSpec::rk4(0.01);
        let a = lat.simulate(&x0, 0.0, 2.0, &spec).unwrap();
        let b = simulate_original(&sys, &x0, 0.0, 2.0, &spec).unwrap();
        for (p, q) in a.states.iter().zip(&b.states) {
            for (u, v) in p.iter().zip(q) {
                assert!((u - v).abs() <= 1e-9);
            }
        }
        assert_eq!(a.n_fcalls, b.n_fcalls);
        assert_eq!(a.n_base_fcalls, a.n_fcalls);
    }

    #[test]
    fn tight_latent_solution_matches_exact() {
        let sys = LinearSystem::benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = PseudoInvertibleNet::random(NetConfig::new(3, 6, 3, 8, 2), 0.3, &mut rng).unwrap();
        let lat = LatentSystem::new(&net, &sys);
        let x0 = [0.7, -0.2, 0.4];
        let r = lat.simulate(&x0, 0.0, 2.0, &SolverSpec::dopri5(1e-10, 1e-10)).unwrap();
        let mut mse = 0.0;
        for (t, x) in r.times.iter().zip(&r.states) {
            let e = sys.solution(&x0, *t);
            mse += x.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        mse /= (3 * r.times.len()) as f64;
        assert!(mse <= 1e-12, "mse {mse}");
        for (a, b) in r.states[0].iter().zip(x0) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
