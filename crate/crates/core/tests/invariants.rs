use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use netnewton::bounds::{
    compute_constants, linear_envelope_value, ProblemConstants, StepsizePolicy,
};
use netnewton::harness::acceptance::five_agent_config;
use netnewton::harness::RunConfig;
use netnewton::objective::{LocalFunction, PenalizedObjective};
use netnewton::real::{DoubleDouble, Real};
use netnewton::simulator::{run, Problem, SimConfig, World};
use netnewton::splitting::{newton_direction, newton_direction_local_form, spectral_certificate};
use netnewton::topology::{metropolis_weights, Graph};

fn instance(
    n: usize,
    p: f64,
    seed: u64,
    alpha: f64,
    params: &[(f64, f64, f64)],
) -> PenalizedObjective<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = Graph::random_connected(n, p, &mut rng).unwrap();
    let net = metropolis_weights(&graph).unwrap();
    let locals = params[..n]
        .iter()
        .map(|&(a, b, c)| LocalFunction::quadratic_log_cosh(a, b, c).unwrap())
        .collect();
    PenalizedObjective::new(Arc::new(net), alpha, locals).unwrap()
}

fn params() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.1f64..4.0, -5.0f64..5.0, 0.0f64..3.0), 12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spectral_bounds_hold_at_any_point(
        n in 2usize..12, p in 0.1f64..1.0, seed in any::<u64>(), alpha in 0.05f64..3.0,
        ps in params(), x in prop::collection::vec(-20.0f64..20.0, 12),
    ) {
        let obj = instance(n, p, seed, alpha, &ps);
        let c = spectral_certificate(&obj, &x[..n]).unwrap();
        prop_assert!(c.split_residual <= 1e-12);
        prop_assert!(c.identity_residual <= 1e-10);
        prop_assert!(c.holds(1e-10), "{c:?}");
    }

    #[test]
    fn local_direction_matches_centralized(
        n in 2usize..12, p in 0.1f64..1.0, seed in any::<u64>(), alpha in 0.05f64..3.0,
        ps in params(), x in prop::collection::vec(-20.0f64..20.0, 12),
    ) {
        let obj = instance(n, p, seed, alpha, &ps);
        let a = newton_direction(&obj, &x[..n]).unwrap();
        let b = newton_direction_local_form(&obj, &x[..n]).unwrap();
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn agents_stay_coherent(
        n in 2usize..10, p in 0.2f64..1.0, seed in any::<u64>(), ps in params(), steps in 1usize..200,
    ) {
        let obj = instance(n, p, seed, 1.0, &ps);
        let problem = Problem::new(obj).unwrap();
        let cfg = SimConfig { epsilon: 0.5 * problem.eps_max().min(1.0), ..SimConfig::new(0.0, 0, seed) };
        let mut world = World::new(problem, &cfg).unwrap();
        for _ in 0..steps {
            world.step().unwrap();
        }
        let c = world.coherence().unwrap();
        prop_assert!(c.holds(1e-11), "{c:?}");
        prop_assert!(world.expected_descent_check().unwrap().ok);
    }

    #[test]
    fn double_double_division_round_trips(a in -1e6f64..1e6, b in 1e-3f64..1e3, lo in -1e-20f64..1e-20) {
        let x = DoubleDouble::of(a) + DoubleDouble::of(lo);
        let y = DoubleDouble::of(b);
        let back = (x / y) * y - x;
        prop_assert!(back.abs().as_f64() <= 1e-30 * a.abs().max(1.0));
    }

    #[test]
    fn admissible_stepsizes_give_a_contracting_envelope(
        m in 0.1f64..5.0, spread in 1.0f64..4.0, delta in 0.01f64..0.9, dspread in 0.0f64..0.09,
        alpha in 0.05f64..3.0, n in 2usize..40, frac in 0.01f64..0.99,
    ) {
        let mut pc = ProblemConstants {
            m, big_m: m * spread, lip: 0.0, delta, delta_max: delta + dspread, alpha, n, epsilon: 1.0, f_gap0: 10.0,
        };
        let probe = compute_constants(&pc, StepsizePolicy::Unchecked).unwrap();
        pc.epsilon = frac * probe.eps_max.min(1.0);
        let rc = compute_constants(&pc, StepsizePolicy::Strict).unwrap();
        prop_assert!(rc.descent_coefficient > 0.0);
        prop_assert!(rc.beta > 0.0 && rc.beta < 1.0);
        prop_assert!((rc.beta - 2.0 * alpha * m * rc.descent_coefficient).abs() <= 1e-12 * rc.beta.max(1e-300) + 1e-15);
        let e1 = linear_envelope_value(rc.beta, 10.0, 5);
        let e2 = linear_envelope_value(rc.beta, 10.0, 6);
        prop_assert!(e2 < e1);
    }

    #[test]
    fn trace_rows_follow_stride(iters in 0u64..300, stride in 1u64..40, seed in any::<u64>()) {
        let problem: Problem<f64> = five_agent_config(&Default::default()).unwrap().problem().unwrap();
        let cfg = SimConfig { stride, ..SimConfig::new(0.8, iters, seed) };
        let tr = run(&problem, &cfg).unwrap();
        let expected = 1 + iters / stride + u64::from(iters % stride != 0);
        prop_assert_eq!(tr.rows.len() as u64, expected);
        prop_assert_eq!(tr.last().t, iters);
        prop_assert_eq!(tr.to_csv(), run(&problem, &cfg).unwrap().to_csv());
    }
}

#[test]
fn config_survives_serialization() {
    let cfg = five_agent_config(&Default::default()).unwrap();
    let text = toml::to_string(&cfg).unwrap();
    let back = RunConfig::parse(&text, std::path::Path::new(".")).unwrap();
    assert_eq!(back, cfg);
}
