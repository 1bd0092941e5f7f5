use std::sync::OnceLock;

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lsim::autodiff::jvp;
use lsim::bench::{
    envelope, evaluate_setting, make_test_set, parse_csv, sort_records, to_csv, work_precision, Method, StudyKind,
    StudyOptions, WorkPrecisionRecord,
};
use lsim::latent::LatentSystem;
use lsim::net::{NetConfig, PseudoInvertibleNet};
use lsim::solvers::{integrate, SolverKind, SolverSpec};
use lsim::systems::{LinearSystem, OdeSystem, VlmConfig, VlmSystem, VortexConfig, VortexSystem};
use lsim::train::{draw_directions, jacobian_loss, make_samples, JvpMode, SampleMode};

fn systems() -> &'static [Box<dyn OdeSystem>] {
    static SYSTEMS: OnceLock<Vec<Box<dyn OdeSystem>>> = OnceLock::new();
    SYSTEMS.get_or_init(|| (0..3).map(build_system).collect())
}

fn build_system(idx: usize) -> Box<dyn OdeSystem> {
    match idx {
        0 => Box::new(LinearSystem::benchmark()),
        1 => Box::new(VortexSystem::new(VortexConfig::default())),
        _ => Box::new(VlmSystem::new(VlmConfig::default()).expect("default vlm trims")),
    }
}

fn random_net(n: usize, m: usize, seed: u64, scale: f64) -> PseudoInvertibleNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PseudoInvertibleNet::random(NetConfig::new(n, m, 4, 8, 2), scale, &mut rng).unwrap()
}

fn vec_in(dim: usize, bound: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-bound..bound, dim)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decode_inverts_encode(seed in any::<u64>(), sys_idx in 0usize..3, raw in vec_in(8, 1.0), radius in 0.0..100.0f64) {
        let sys = &systems()[sys_idx];
        let n = sys.dim();
        let net = random_net(n, n + 3, seed, 0.2);
        let norm = raw[..n].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let x: Vec<f64> = raw[..n].iter().map(|v| v / norm * radius).collect();
        let back = net.decode(&net.encode(&x).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&back, &x) <= 1e-9, "{x:?} -> {back:?}");
    }

    #[test]
    fn phi_inverse_inverts_phi(seed in any::<u64>(), u in vec_in(6, 3.0)) {
        let net = random_net(3, 6, seed, 1.0);
        let back = net.phi_inverse(&net.phi(&u).unwrap()).unwrap();
        prop_assert!(max_abs_diff(&back, &u) <= 1e-10);
    }

    #[test]
    fn phi_jvp_is_linear(seed in any::<u64>(), u in vec_in(5, 2.0), v in vec_in(5, 1.0), w in vec_in(5, 1.0),
                         a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let net = random_net(3, 5, seed, 1.0);
        let mix: Vec<f64> = v.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
        let lhs = net.phi_jvp(&u, &mix).unwrap();
        let jv = net.phi_jvp(&u, &v).unwrap();
        let jw = net.phi_jvp(&u, &w).unwrap();
        for i in 0..5 {
            let rhs = a * jv[i] + b * jw[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn system_jvp_is_linear(sys_idx in 0usize..2, x in vec_in(8, 1.0), v in vec_in(8, 1.0), w in vec_in(8, 1.0),
                            a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let sys = &systems()[sys_idx];
        let n = sys.dim();
        let (x, v, w) = (&x[..n], &v[..n], &w[..n]);
        let f = |d: &[lsim::autodiff::Dual]| sys.rhs_dual(d).unwrap();
        let mix: Vec<f64> = v.iter().zip(w).map(|(p, q)| a * p + b * q).collect();
        let lhs = jvp(f, x, &mix).unwrap();
        let jv = jvp(f, x, v).unwrap();
        let jw = jvp(f, x, w).unwrap();
        for i in 0..n {
            let rhs = a * jv[i] + b * jw[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn pseudo_inverse_is_left_inverse_after_updates(seed in any::<u64>(), steps in prop::collection::vec(vec_in(15, 0.3), 1..5)) {
        let net = random_net(3, 5, seed, 0.5);
        let mut lift = net.lift().clone();
        for step in steps {
            let updated: Vec<f64> = lift.matrix().iter().zip(&step).map(|(a, d)| a + d).collect();
            lift.set_entries(&updated);
            prop_assert!(lift.is_stale());
            if lift.refresh_pseudo_inverse().is_err() {
                continue;
            }
            let prod = lift.pseudo_inverse().dot(lift.matrix());
            let err = (&prod - &Array2::<f64>::eye(3)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(err <= 1e-10, "|A⁺A - I| = {err}");
        }
    }

    #[test]
    fn jacobian_loss_is_nonnegative(seed in any::<u64>(), pts in prop::collection::vec(vec_in(3, 1.0), 1..6), k in 1usize..4) {
        let sys = LinearSystem::benchmark();
        let net = random_net(3, 5, seed, 0.5);
        let points = Array2::from_shape_vec((pts.len(), 3), pts.concat()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dirs = draw_directions(5, k, &mut rng);
        let l = jacobian_loss(&net, &sys, points.view(), dirs.view(), JvpMode::Exact).unwrap();
        prop_assert!(l >= 0.0 && l.is_finite());
    }

    #[test]
    fn envelope_calls_fall_as_error_grows(entries in prop::collection::vec((1u64..10_000, -12.0..1.0f64, any::<bool>()), 0..40)) {
        let records: Vec<WorkPrecisionRecord> = entries
            .iter()
            .map(|&(calls, log_mse, failed)| WorkPrecisionRecord {
                system: "linear".into(),
                method: Method::Original,
                solver: SolverKind::Euler,
                setting: 0.1,
                n_fcalls: calls,
                mse: if failed && calls % 3 == 0 { f64::INFINITY } else { 10f64.powf(log_mse) },
                wall_time_s: 0.0,
                seed: 0,
            })
            .collect();
        let env = envelope(&records, Method::Original);
        for w in env.windows(2) {
            prop_assert!(w[0].mse <= w[1].mse);
            prop_assert!(w[0].n_fcalls >= w[1].n_fcalls);
        }
        // every finite record is dominated by some envelope point
        for r in records.iter().filter(|r| r.mse.is_finite()) {
            prop_assert!(env.iter().any(|p| p.mse <= r.mse && p.n_fcalls <= r.n_fcalls as f64));
        }
    }

    #[test]
    fn csv_round_trip(entries in prop::collection::vec(
        (0usize..3, any::<bool>(), 0usize..3, 1e-12..1.0f64, 1u64..1_000_000, prop_oneof![Just(f64::INFINITY), 0.0..1e3f64], 0.0..10.0f64, any::<u64>()),
        0..20,
    )) {
        let systems = ["linear", "vortex", "vlm"];
        let solvers = [SolverKind::Euler, SolverKind::Rk4, SolverKind::Dopri5];
        let mut records: Vec<WorkPrecisionRecord> = entries
            .iter()
            .map(|&(s, latent, k, setting, calls, mse, wall, seed)| WorkPrecisionRecord {
                system: systems[s].into(),
                method: if latent { Method::Latent } else { Method::Original },
                solver: solvers[k],
                setting,
                n_fcalls: calls,
                mse,
                wall_time_s: wall,
                seed,
            })
            .collect();
        let text = to_csv(&records).unwrap();
        let parsed = parse_csv(&text).unwrap();
        prop_assert_eq!(to_csv(&parsed).unwrap(), text);
        sort_records(&mut records);
        prop_assert_eq!(parsed, records);
    }

    #[test]
    fn latent_rhs_calls_base_once(seed in any::<u64>(), sys_idx in 0usize..3, x in vec_in(8, 0.5), calls in 1usize..5) {
        // a private instance, so parallel tests do not touch its counter
        let sys = build_system(sys_idx);
        let n = sys.dim();
        let net = random_net(n, n + 2, seed, 0.3);
        let x0: Vec<f64> = sys.domain().lower.iter().zip(&sys.domain().upper).zip(&x)
            .map(|((lo, hi), t)| 0.5 * (lo + hi) + t * 0.5 * (hi - lo)).collect();
        let lat = LatentSystem::new(&net, sys.as_ref());
        let z = net.encode(&x0).unwrap();
        let before = sys.calls();
        for _ in 0..calls {
            lat.rhs(&z).unwrap();
        }
        prop_assert_eq!(lat.base_calls(), calls as u64);
        prop_assert_eq!(sys.calls() - before, calls as u64);
    }

    #[test]
    fn fixed_step_call_counts(dt in 0.01..0.5f64, rk4 in any::<bool>()) {
        let spec = if rk4 { SolverSpec::rk4(dt) } else { SolverSpec::euler(dt) };
        let run = || {
            let mut calls = 0u64;
            let r = integrate(|x| { calls += 1; Ok(vec![-x[0]]) }, &[1.0], 0.0, 1.0, &spec).unwrap();
            (calls, r.n_fcalls, r.n_steps)
        };
        let (calls, reported, steps) = run();
        prop_assert_eq!(calls, reported);
        prop_assert_eq!(calls, steps * if rk4 { 4 } else { 1 });
        prop_assert_eq!(run(), (calls, reported, steps));
    }

    #[test]
    fn study_values_must_increase(values in prop::collection::vec(0usize..50, 1..6)) {
        let opts = StudyOptions { values: Some(values.clone()), ..StudyOptions::default() };
        let ok = !values.contains(&0) && values.windows(2).all(|w| w[0] < w[1]);
        prop_assert_eq!(opts.values_for(StudyKind::SampleSize).is_ok(), ok);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn uniform_samples_stay_in_box(seed in any::<u64>(), sys_idx in 0usize..3, points in 1usize..50) {
        let sys = &systems()[sys_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = make_samples(sys.as_ref(), &SampleMode::Uniform { points }, &mut rng).unwrap();
        prop_assert_eq!(set.len(), points);
        for i in 0..points {
            prop_assert!(sys.domain().contains(set.point(i)));
        }
    }

    #[test]
    fn record_calls_are_sum_of_trajectory_calls(seed in any::<u64>(), dt in 0.02..0.3f64, latent in any::<bool>()) {
        let sys = LinearSystem::benchmark();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tests = make_test_set(&sys, 3, 1.5, 2.0, 21, &mut rng).unwrap();
        let net = random_net(3, 5, seed, 0.2);
        let net = latent.then_some(&net);
        let specs = [SolverSpec::euler(dt).with_grid(21), SolverSpec::dopri5(1e-5, 1e-5).with_grid(21)];
        let records = work_precision(&sys, net, &specs, &tests, false, seed).unwrap();
        for (spec, rec) in specs.iter().zip(&records) {
            let outcomes = evaluate_setting(&sys, net, spec, &tests, false);
            prop_assert_eq!(rec.n_fcalls, outcomes.iter().map(|o| o.n_fcalls).sum::<u64>());
            prop_assert!(rec.n_fcalls >= 1);
            prop_assert!(rec.mse >= 0.0);
        }
    }
}
