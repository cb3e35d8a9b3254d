use netnewton::harness::acceptance::{five_agent_config, FIVE_AGENT_F_STAR};
use netnewton::harness::commands::{bounds, compare, execute, run_newton, validate};
use netnewton::harness::config::{Mode, Precision};
use netnewton::simulator::AGGREGATE_HEADER;

#[test]
fn double_double_monte_carlo_through_the_harness() {
    let mut cfg = five_agent_config(&Default::default()).unwrap();
    cfg.run.precision = Precision::DoubleDouble;
    cfg.run.trials = 4;
    cfg.run.iters = 400;
    cfg.run.stride = 100;
    let out = run_newton(&cfg).unwrap();
    assert_eq!(out.trace.precision, "double-double");
    let agg = out.aggregate.unwrap();
    assert_eq!(agg.trials, 4);
    assert_eq!(
        agg.rows.iter().map(|r| r.t).collect::<Vec<_>>(),
        [0, 100, 200, 300, 400]
    );
    assert!(agg.rows[4].mean_gap.abs() < 1e-40);
    assert!(agg.to_csv().starts_with(AGGREGATE_HEADER));
    assert!((out.trace.rows[0].f - 55.0).abs() < 1e-12);
}

#[test]
fn newton_and_gossip_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = five_agent_config(&Default::default()).unwrap();
    cfg.output.dir = dir.path().to_path_buf();
    cfg.run.iters = 100;
    cfg.run.trials = 1;
    cfg.gossip.iters = 1000;
    let (summary, written) = execute(&cfg, Mode::Newton).unwrap();
    assert!(summary.contains("messages = 2000"), "{summary}");
    assert_eq!(written.len(), 2);
    let (_, written) = execute(&cfg, Mode::Gossip).unwrap();
    let gossip = std::fs::read_to_string(&written[0]).unwrap();
    let last = gossip.lines().last().unwrap();
    assert!(
        last.starts_with("1000,") && last.contains(",2000,"),
        "{last}"
    );
}

#[test]
fn bounds_and_validation_on_the_bundled_setup() {
    let cfg = five_agent_config(&Default::default()).unwrap();
    let b = bounds(&cfg).unwrap();
    assert!((b.pc.f_gap0 - (55.0 - FIVE_AGENT_F_STAR)).abs() < 1e-12);
    assert!((b.rc.beta - 24.96 / 405.0).abs() < 1e-15);
    let kv = b.rc.to_key_values(&b.pc);
    assert!(kv.contains("eps_max = 1.125"));
    let v = validate(&cfg).unwrap();
    assert!(v.passed(), "{}", v.render());
}

#[test]
fn comparison_counts_unsettled_runs_at_the_horizon() {
    let mut cfg = five_agent_config(&Default::default()).unwrap();
    cfg.run.trials = 2;
    cfg.run.iters = 5;
    cfg.gossip.iters = 10;
    let c = compare(&cfg).unwrap();
    assert_eq!(c.newton, [None, None]);
    assert_eq!(c.newton_mean(), 6.0);
    assert_eq!(c.gossip_mean(), 11.0);
    assert!(c.render().contains("2 unsettled"));
}
