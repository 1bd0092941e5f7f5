//! Training of the pseudo-invertible encoder on the slow-dynamics loss.

mod loss;
mod optim;
mod samples;

use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{draw_directions, jacobian_loss, loss_and_grad, JvpMode, LossGrad};
pub use optim::{Adam, OptimizerKind};
pub use samples::{make_samples, PreparedSamples, Provenance, SampleMode, SampleSet};

use crate::error::{Error, Result};
use crate::net::{NetConfig, PseudoInvertibleNet};
use crate::systems::OdeSystem;

/// Samples above this count are trained in mini-batches.
pub const FULL_BATCH_LIMIT: usize = 600;
pub const DEFAULT_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub coupling_layers: usize,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub clamp: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Samples per step; `None` picks full batch up to [`FULL_BATCH_LIMIT`]
    /// samples and [`DEFAULT_BATCH`] above.
    pub batch_size: Option<usize>,
    /// Random directions per batch.
    pub directions: usize,
    pub samples: SampleMode,
    pub seed: u64,
    pub log_every: usize,
    /// Training stops with [`Error::Diverged`] once the loss exceeds the
    /// initial loss by this factor.
    pub divergence_factor: f64,
    /// Tape rows (samples × directions) per parallel chunk.
    pub chunk_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::linear_defaults()
    }
}

impl TrainConfig {
    pub fn linear_defaults() -> Self {
        Self {
            latent_dim: 64,
            coupling_layers: 6,
            hidden_width: 64,
            hidden_depth: 3,
            clamp: NetConfig::DEFAULT_CLAMP,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 30_000,
            batch_size: None,
            directions: 8,
            samples: SampleMode::Uniform { points: 600 },
            seed: 0,
            log_every: 100,
            divergence_factor: 1e6,
            chunk_rows: 256,
        }
    }

    pub fn vortex_defaults() -> Self {
        Self {
            coupling_layers: 8,
            hidden_depth: 5,
            optimizer: OptimizerKind::AdamW,
            weight_decay: 0.01,
            epochs: 50_000,
            directions: 4,
            samples: SampleMode::trajectories(40),
            ..Self::linear_defaults()
        }
    }

    pub fn vlm_defaults() -> Self {
        Self {
            latent_dim: 32,
            coupling_layers: 8,
            optimizer: OptimizerKind::AdamW,
            learning_rate: 5e-4,
            weight_decay: 0.01,
            epochs: 50_000,
            samples: SampleMode::trajectories(20),
            ..Self::linear_defaults()
        }
    }

    /// Defaults for a system by name (`linear`, `vortex`, `vlm`).
    pub fn defaults_for(system: &str) -> Result<Self> {
        match system {
            "linear" => Ok(Self::linear_defaults()),
            "vortex" => Ok(Self::vortex_defaults()),
            "vlm" => Ok(Self::vlm_defaults()),
            other => Err(Error::Config(format!("unknown system `{other}`"))),
        }
    }

    pub fn net_config(&self, n: usize) -> NetConfig {
        NetConfig {
            clamp: self.clamp,
            ..NetConfig::new(n, self.latent_dim, self.coupling_layers, self.hidden_width, self.hidden_depth)
        }
    }

    pub fn effective_batch(&self, samples: usize) -> usize {
        let b = match self.batch_size {
            Some(b) => b,
            None if samples <= FULL_BATCH_LIMIT => samples,
            None => DEFAULT_BATCH,
        };
        b.clamp(1, samples.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.directions == 0 {
            return bad("directions must be positive");
        }
        if self.samples.is_empty() {
            return bad("sample count must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        if self.log_every == 0 || self.chunk_rows == 0 {
            return bad("log_every and chunk_rows must be positive");
        }
        if !(self.divergence_factor > 1.0) {
            return bad("divergence_factor must exceed 1");
        }
        Ok(())
    }
}

/// One logged point of the loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Parameters with the lowest batch loss seen.
    pub net: PseudoInvertibleNet,
    pub best_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub initial_loss: Option<f64>,
    pub history: Vec<LossRecord>,
    pub epochs_run: usize,
}

const STREAM_INIT: u64 = 0;
const STREAM_SAMPLES: u64 = 1;
const STREAM_BATCHES: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws samples and an initial network from `cfg.seed` and trains.
pub fn train(sys: &dyn OdeSystem, cfg: &TrainConfig, observer: &mut dyn FnMut(&LossRecord)) -> Result<TrainReport> {
    cfg.validate()?;
    let net = PseudoInvertibleNet::new(cfg.net_config(sys.dim()), &mut stream(cfg.seed, STREAM_INIT))?;
    let samples = make_samples(sys, &cfg.samples, &mut stream(cfg.seed, STREAM_SAMPLES))?;
    train_on(sys, net, &samples, cfg, observer)
}

/// Trains `net` on a given sample set.
pub fn train_on(
    sys: &dyn OdeSystem,
    mut net: PseudoInvertibleNet,
    samples: &SampleSet,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&LossRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report =
        TrainReport { net: net.clone(), best_loss: None, best_epoch: None, initial_loss: None, history: vec![], epochs_run: 0 };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    let prepared = PreparedSamples::new(sys, samples)?;
    let count = prepared.len();
    let batch = cfg.effective_batch(count);
    let mut rng = stream(cfg.seed, STREAM_BATCHES);
    let mut opt = Adam::new(cfg.optimizer, net.param_count(), cfg.learning_rate, cfg.weight_decay);
    let mut params = net.params();
    let start = Instant::now();
    let all: Vec<usize> = (0..count).collect();

    for epoch in 0..cfg.epochs {
        let idx: Vec<usize> = if batch == count {
            all.clone()
        } else {
            let mut v = index::sample(&mut rng, count, batch).into_vec();
            v.sort_unstable();
            v
        };
        let dirs = draw_directions(net.m(), cfg.directions, &mut rng);
        let lg = loss_and_grad(&net, &prepared, &idx, &dirs, cfg.chunk_rows)?;
        let initial = *report.initial_loss.get_or_insert(lg.loss);
        if lg.loss > cfg.divergence_factor * initial {
            return Err(Error::Diverged { epoch, loss: lg.loss });
        }
        if report.best_loss.is_none_or(|b| lg.loss < b) {
            report.best_loss = Some(lg.loss);
            report.best_epoch = Some(epoch);
            report.net = net.clone();
        }
        if epoch % cfg.log_every == 0 || epoch + 1 == cfg.epochs {
            let rec = LossRecord { epoch, loss: lg.loss, wall_time_s: start.elapsed().as_secs_f64() };
            observer(&rec);
            report.history.push(rec);
        }
        opt.step(&mut params, &lg.grad);
        net.set_params(&params)?;
        report.epochs_run = epoch + 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Dual;
    use crate::systems::{DomainBox, LinearSystem};
    use ndarray::Array2;

    fn tiny(epochs: usize) -> TrainConfig {
        TrainConfig {
            latent_dim: 5,
            coupling_layers: 2,
            hidden_width: 6,
            hidden_depth: 1,
            epochs,
            directions: 2,
            samples: SampleMode::Uniform { points: 12 },
            seed: 9,
            ..TrainConfig::linear_defaults()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_net() {
        let sys = LinearSystem::benchmark();
        let cfg = tiny(0);
        let r = train(&sys, &cfg, &mut |_| {}).unwrap();
        let init = PseudoInvertibleNet::new(cfg.net_config(3), &mut stream(cfg.seed, STREAM_INIT)).unwrap();
        assert_eq!(r.net.params(), init.params());
        assert!(r.history.is_empty() && r.best_loss.is_none());
    }

    #[test]
    fn training_is_deterministic() {
        let sys = LinearSystem::benchmark();
        let a = train(&sys, &tiny(5), &mut |_| {}).unwrap();
        let b = train(&sys, &tiny(5), &mut |_| {}).unwrap();
        assert_eq!(a.net.params(), b.net.params());
        let losses = |r: &TrainReport| r.history.iter().map(|h| (h.epoch, h.loss)).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
    }

    #[test]
    fn loss_decreases_on_linear_system() {
        let sys = LinearSystem::benchmark();
        let cfg = TrainConfig { learning_rate: 3e-3, ..tiny(300) };
        let r = train(&sys, &cfg, &mut |_| {}).unwrap();
        assert!(r.best_loss.unwrap() < 0.5 * r.initial_loss.unwrap(), "{r:?}");
    }

    /// `ẋ = −λx` in one dimension.
    struct Decay(f64, DomainBox);

    impl OdeSystem for Decay {
        fn name(&self) -> &str {
            "decay"
        }
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![-self.0 * x[0]])
        }
        fn rhs_dual(&self, x: &[Dual]) -> Result<Vec<Dual>> {
            Ok(vec![x[0] * Dual::constant(-self.0)])
        }
        fn domain(&self) -> &DomainBox {
            &self.1
        }
        fn horizon(&self) -> f64 {
            1.0
        }
        fn calls(&self) -> u64 {
            0
        }
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        let sys = LinearSystem::benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = PseudoInvertibleNet::random(NetConfig::new(3, 5, 2, 3, 2), 0.4, &mut rng).unwrap();
        let s = make_samples(&sys, &SampleMode::Uniform { points: 3 }, &mut rng).unwrap();
        let p = PreparedSamples::new(&sys, &s).unwrap();
        let dirs = draw_directions(5, 2, &mut rng);
        let lg = loss_and_grad(&net, &p, &[0, 1, 2], &dirs, 4).unwrap();
        let params = net.params();
        let reference = |q: &[f64]| {
            let mut other = net.clone();
            other.set_params(q).unwrap();
            jacobian_loss(&other, &sys, s.points.view(), dirs.view(), JvpMode::Exact).unwrap()
        };
        for i in (0..params.len()).step_by(7) {
            let h = 1e-6 * (1.0 + params[i].abs());
            let mut q = params.clone();
            q[i] += h;
            let up = reference(&q);
            q[i] -= 2.0 * h;
            let down = reference(&q);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - lg.grad[i]).abs() <= 1e-4 * (fd.abs() + 1e-3 * lg.loss), "param {i}: {fd} vs {}", lg.grad[i]);
        }
    }

    #[test]
    fn scalar_decay_loss_matches_reference() {
        let sys = Decay(20.0, DomainBox::symmetric(1, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PseudoInvertibleNet::random(NetConfig::new(1, 2, 2, 3, 1), 0.5, &mut rng).unwrap();
        let pts = Array2::from_shape_vec((2, 1), vec![0.4, -0.7]).unwrap();
        let s = SampleSet { points: pts.clone(), provenance: Provenance::UniformBox, bounds: sys.1.clone() };
        let p = PreparedSamples::new(&sys, &s).unwrap();
        let dirs = draw_directions(2, 3, &mut rng);
        let lg = loss_and_grad(&net, &p, &[0, 1], &dirs, 8).unwrap();
        let reference = jacobian_loss(&net, &sys, pts.view(), dirs.view(), JvpMode::Exact).unwrap();
        assert!((lg.loss - reference).abs() <= 1e-10 * reference);
    }

    #[test]
    fn identity_net_loss_is_projected_jacobian() {
        // with φ = id and A = [1; 0], ż = (−λ z₀, 0) so J_ż v = (−λ v₀, 0)
        let lambda = 20.0;
        let sys = Decay(lambda, DomainBox::symmetric(1, 1.0));
        let net = PseudoInvertibleNet::identity(NetConfig::new(1, 2, 2, 3, 1)).unwrap();
        let pts = Array2::from_shape_vec((1, 1), vec![0.3]).unwrap();
        let dirs = Array2::from_shape_vec((2, 2), vec![0.6, 0.8, 1.0, 0.0]).unwrap();
        let l = jacobian_loss(&net, &sys, pts.view(), dirs.view(), JvpMode::Exact).unwrap();
        let expected = (lambda * lambda * 0.36 + lambda * lambda) / 2.0;
        assert!((l - expected).abs() <= 1e-12 * expected);
    }
}
