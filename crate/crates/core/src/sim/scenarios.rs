//! Ready-made scenarios and the graceful-failover retry harness.

use super::config::{
    ClientConfig, Consistency, FaultConfig, NetworkConfig, RegionConfig, ScenarioConfig, ScenarioKind,
};
use crate::failover::{
    transition, FailoverManagerState, FailoverParams, PartitionReport, RegionId, RegionServiceStatus, StateEdit,
};
use crate::scheduler::{BackoffPolicy, SchedulerStats};
use crate::time::SimTime;
use std::time::Duration;

fn regions(names: &[&str]) -> Vec<RegionConfig> {
    names
        .iter()
        .enumerate()
        .map(|(i, id)| RegionConfig {
            id: (*id).to_owned(),
            priority: i as u32 + 1,
        })
        .collect()
}

fn base(kind: ScenarioKind, name: &str, region_names: &[&str], duration_s: f64, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        scenario: kind,
        name: Some(name.to_owned()),
        regions: regions(region_names),
        proposers: None,
        acceptors: 7,
        lease_window_s: 45.0,
        proposer_interval_s: 30.0,
        backoff_policy: BackoffPolicy::Adaptive,
        consistency: Consistency::Strong,
        min_durability: 1,
        partition_sets: 1,
        network: NetworkConfig::default(),
        faults: Vec::new(),
        intents: Vec::new(),
        client: ClientConfig::default(),
        failover: Default::default(),
        scheduler: Default::default(),
        duration_s,
        seed,
    }
}

/// Proposers renewing one lease register as fast as the policy allows:
/// one hour, 7 acceptors, 45 s lease, 30 s interval.
pub fn dueling(proposers: usize, policy: BackoffPolicy, seed: u64) -> ScenarioConfig {
    let mut c = base(ScenarioKind::Dueling, "dueling", &[], 3600.0, seed);
    c.proposers = Some(proposers);
    c.backoff_policy = policy;
    c.network.random_p50_ms = Some([10.0, 250.0]);
    c.client.enabled = false;
    c
}

/// Three power outages of 30 minutes each, always hitting the preferred
/// write region, across `partition_sets` partition sets.
pub fn power_outages(partition_sets: usize, consistency: Consistency, seed: u64) -> ScenarioConfig {
    let mut c = base(ScenarioKind::Failover, "power-outages", &["west", "east", "asia"], 10_200.0, seed);
    c.partition_sets = partition_sets;
    c.consistency = consistency;
    c.network.links = vec![
        link("west", "east", 40.0),
        link("west", "asia", 150.0),
        link("east", "asia", 120.0),
    ];
    c.faults = [600.0, 3900.0, 7200.0]
        .into_iter()
        .map(|start_s| FaultConfig::RegionPowerOutage {
            target: "west".into(),
            start_s,
            duration_s: 1800.0,
        })
        .collect();
    c
}

/// Eventual consistency with slow links out of the write region and a
/// busier client, so power outages strand acknowledged writes that the
/// survivors never received.
pub fn lagging_replication(partition_sets: usize, seed: u64) -> ScenarioConfig {
    let mut c = power_outages(partition_sets, Consistency::Eventual, seed);
    c.name = Some("lagging-replication".into());
    c.network.links = vec![
        link("west", "east", 600.0),
        link("west", "asia", 900.0),
        link("east", "asia", 120.0),
    ];
    c.client.write_interval_ms = 250.0;
    c
}

fn link(a: &str, b: &str, p50_ms: f64) -> super::config::LinkConfig {
    super::config::LinkConfig {
        a: a.into(),
        b: b.into(),
        p50_ms,
        jitter: None,
    }
}

/// A two-region account with minimum durability 1 where `failed` loses
/// power for ten minutes.
pub fn two_region(failed: &str, seed: u64) -> ScenarioConfig {
    let mut c = base(ScenarioKind::Failover, "two-region", &["west", "east"], 3000.0, seed);
    c.partition_sets = 10;
    c.faults = vec![FaultConfig::RegionPowerOutage {
        target: failed.into(),
        start_s: 600.0,
        duration_s: 600.0,
    }];
    c
}

/// The write region keeps running but is cut off from everything, then a
/// second fault cuts it from the acceptor stores only.
pub fn write_region_isolation(seed: u64) -> ScenarioConfig {
    let mut c = base(ScenarioKind::Failover, "isolation", &["west", "east", "asia"], 4200.0, seed);
    c.partition_sets = 10;
    c.faults = vec![FaultConfig::RegionIsolation {
        target: "west".into(),
        start_s: 600.0,
        duration_s: 600.0,
    }];
    c.faults.extend((0..7).map(|s| FaultConfig::LinkPartition {
        a: "west".into(),
        b: format!("store-{s}"),
        start_s: 2400.0,
        duration_s: 600.0,
    }));
    c
}

/// Power outages, isolation and two-region variants that together make up
/// the safety suite.
pub fn safety_suite(seed: u64) -> Vec<ScenarioConfig> {
    vec![
        power_outages(10, Consistency::Strong, seed),
        power_outages(10, Consistency::Eventual, seed),
        lagging_replication(10, seed),
        two_region("west", seed),
        two_region("east", seed),
        write_region_isolation(seed),
    ]
}

/// Graceful failover attempts observed by [`graceful_retry_harness`].
#[derive(Clone, Debug, PartialEq)]
pub struct GracefulRetryTrace {
    /// Start time of each attempt, in seconds.
    pub attempts_s: Vec<f64>,
    /// Fraction of report instants at which writes were enabled.
    pub writes_enabled_fraction: f64,
}

/// Drives the failover manager directly with periodic reports. The
/// preferred region `a` returns after an outage, but its replica never
/// catches up, so every graceful failback to it times out.
pub fn graceful_retry_harness(gate_enabled: bool, duration: Duration) -> GracefulRetryTrace {
    let report_every = Duration::from_secs(30);
    let params = FailoverParams {
        graceful_backoff_enabled: gate_enabled,
        ..FailoverParams::default()
    };
    let (a, b) = (RegionId(0), RegionId(1));
    // Writes sit at `b` after an earlier outage of `a`; `a` holds a read lease.
    let mut s: FailoverManagerState<f64> = FailoverManagerState::bootstrap(vec![a, b], 1, SchedulerStats::default());
    s.write_region = b;
    s.epoch = 2;
    s.region_status.insert(b, RegionServiceStatus::ReadWrite);
    s.region_status.insert(a, RegionServiceStatus::ReadOnlyReplicationAllowed);
    s.active_leases = [a].into_iter().collect();
    let mut now = SimTime::ZERO;
    let mut attempts = Vec::new();
    let mut enabled = 0usize;
    let mut samples = 0usize;
    let mut b_lsn = 100;
    while now < SimTime::ZERO + duration {
        now += report_every;
        b_lsn += 30;
        for (r, lsn) in [(b, b_lsn), (a, 50)] {
            let quiesced = s.status(r) == Some(RegionServiceStatus::ReadWriteWithWritesQuiesced);
            let before = s.graceful.as_ref().map(|g| g.started_at);
            s = transition(&s, &StateEdit::report_only(report(r, lsn, s.epoch, now, quiesced)), now, &params);
            if let Some(g) = &s.graceful {
                if before != Some(g.started_at) {
                    attempts.push(g.started_at.as_secs_f64());
                }
            }
        }
        samples += 1;
        if s.writes_enabled() {
            enabled += 1;
        }
    }
    GracefulRetryTrace {
        attempts_s: attempts,
        writes_enabled_fraction: enabled as f64 / samples.max(1) as f64,
    }
}

fn report(region: RegionId, lsn: u64, epoch: u64, now: SimTime, quiesced: bool) -> PartitionReport {
    PartitionReport {
        region,
        healthy: true,
        committed_lsn: lsn,
        epoch_seen: epoch,
        report_time: now,
        writes_quiesced: quiesced,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in safety_suite(1) {
            c.validate().unwrap();
        }
        dueling(9, BackoffPolicy::Static, 1).validate().unwrap();
        power_outages(100, Consistency::Strong, 1).validate().unwrap();
    }

    #[test]
    fn graceful_retries_back_off_geometrically() {
        let t = graceful_retry_harness(true, Duration::from_secs(4 * 3600));
        let gaps: Vec<f64> = t.attempts_s.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.len() >= 4, "{gaps:?}");
        for w in gaps.windows(2).take(4) {
            let ratio = w[1] / w[0];
            assert!((ratio - 2.0).abs() <= 30.0 / w[0] + 1e-9, "{gaps:?}");
        }
        let ungated = graceful_retry_harness(false, Duration::from_secs(4 * 3600));
        assert!(ungated.writes_enabled_fraction < 0.2, "{}", ungated.writes_enabled_fraction);
        assert!(t.writes_enabled_fraction > 0.9, "{}", t.writes_enabled_fraction);
    }
}
