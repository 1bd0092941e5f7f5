use lsim::systems::LinearSystem;
use lsim::train::{train, SampleMode, TrainConfig};

fn small() -> TrainConfig {
    TrainConfig {
        latent_dim: 8,
        coupling_layers: 2,
        hidden_width: 16,
        hidden_depth: 2,
        directions: 4,
        samples: SampleMode::Uniform { points: 100 },
        epochs: 1000,
        log_every: 1,
        seed: 11,
        ..TrainConfig::linear_defaults()
    }
}

#[test]
fn moving_average_loss_trends_down() {
    let sys = LinearSystem::benchmark();
    let report = train(&sys, &small(), &mut |_| {}).unwrap();
    let losses: Vec<f64> = report.history.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 1000);
    let ma: Vec<f64> = losses.windows(100).map(|w| w.iter().sum::<f64>() / 100.0).collect();
    for (i, w) in ma.windows(2).enumerate() {
        assert!(w[1] <= 1.05 * w[0], "moving average rose {:.1}% at epoch {}", 100.0 * (w[1] / w[0] - 1.0), i + 100);
    }
    assert!(ma.last().unwrap() < &(0.1 * ma[0]));
}

#[test]
fn same_seed_same_parameters() {
    let sys = LinearSystem::benchmark();
    let cfg = TrainConfig { epochs: 50, ..small() };
    let a = train(&sys, &cfg, &mut |_| {}).unwrap();
    let b = train(&sys, &cfg, &mut |_| {}).unwrap();
    let bits = |p: Vec<f64>| p.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(a.net.params()), bits(b.net.params()));
    let c = train(&sys, &TrainConfig { seed: 12, ..cfg }, &mut |_| {}).unwrap();
    assert_ne!(bits(a.net.params()), bits(c.net.params()));
}
