//! End-to-end simulator behaviour.

use ppaf::scheduler::BackoffPolicy;
use ppaf::sim::config::{Consistency, ScenarioConfig};
use ppaf::sim::{self, scenarios};

const FAULT_FREE: &str = r#"
scenario = "failover"
partition_sets = 3
duration_s = 900.0
seed = 4

[[regions]]
id = "west"
priority = 1

[[regions]]
id = "east"
priority = 2
"#;

#[test]
fn same_seed_same_trace() {
    for cfg in [
        scenarios::power_outages(2, Consistency::Strong, 3),
        scenarios::dueling(5, BackoffPolicy::Static, 3),
    ] {
        let a = sim::run(&cfg, true).unwrap();
        let b = sim::run(&cfg, true).unwrap();
        assert!(!a.trace.is_empty());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.metrics, b.metrics);
    }
}

#[test]
fn different_seeds_diverge() {
    let a = sim::run(&scenarios::dueling(5, BackoffPolicy::Static, 1), true).unwrap();
    let b = sim::run(&scenarios::dueling(5, BackoffPolicy::Static, 2), true).unwrap();
    assert_ne!(a.trace, b.trace);
}

#[test]
fn fault_free_run_is_quiet() {
    let cfg = ScenarioConfig::from_toml_str(FAULT_FREE).unwrap();
    let m = sim::run(&cfg, false).unwrap().metrics;
    assert_eq!(m.failure_rate, 0.0);
    assert_eq!(m.lost_writes, 0);
    for p in &m.partition_sets {
        assert_eq!(p.final_epoch, 1);
        assert_eq!(p.graceful_failovers + p.ungraceful_failovers, 0);
        assert!(p.acknowledged_writes > 0);
    }
}

#[test]
fn one_epoch_per_write_region_outage() {
    let m = sim::run(&scenarios::two_region("west", 2), false).unwrap().metrics;
    for p in &m.partition_sets {
        let o = &p.outages[0];
        assert!(o.was_write_region);
        assert_eq!(p.ungraceful_failovers, 1, "{p:?}");
        // One epoch for the failover, one for the failback.
        assert_eq!(p.final_epoch, 3, "{p:?}");
        assert_eq!(o.epoch_increments, 2, "{o:?}");
    }
}

#[test]
fn unknown_field_is_named() {
    let err = ScenarioConfig::from_toml_str(&format!("{FAULT_FREE}\nacceptor = 3\n")).unwrap_err();
    assert!(err.to_string().contains("acceptor"), "{err}");
}

#[test]
fn invalid_alpha_is_rejected() {
    let err = ScenarioConfig::from_toml_str(&format!("{FAULT_FREE}\n[scheduler]\nalpha = 0.0\n")).unwrap_err();
    assert!(err.to_string().contains("alpha"), "{err}");
}
