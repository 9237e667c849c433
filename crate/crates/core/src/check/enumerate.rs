//! Bounded exhaustive exploration of the failover manager.
//!
//! Starting from a three-region bootstrap, every sequence of edits up to a
//! depth is applied: reports from each region (healthy or not, caught up or
//! lagging an epoch), lease requests from the write region and operator
//! intents, with time advancing by short or long steps. Every reached state
//! must satisfy the state invariants and keep epochs monotone, and from
//! every reached state a stretch of healthy, caught-up reports must bring
//! writes back.

use crate::failover::{
    transition, FailoverManagerState, FailoverParams, IntentKind, LeaseRequest, PartitionReport, RegionId,
    RegionServiceStatus, StateEdit, TopologyIntent,
};
use crate::scheduler::SchedulerStats;
use crate::time::SimTime;
use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::time::Duration;

type State = FailoverManagerState<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationConfig {
    pub regions: u16,
    pub min_durability: u32,
    pub depth: usize,
    /// Healthy report rounds allowed for writes to come back.
    pub recovery_rounds: usize,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        EnumerationConfig {
            regions: 3,
            min_durability: 1,
            depth: 4,
            recovery_rounds: 12,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EnumerationSummary {
    pub states: usize,
    pub transitions: usize,
    pub max_epoch: u64,
}

/// A path of edits leading to a bad state.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumerationFailure {
    pub problem: String,
    pub path: Vec<String>,
}

#[derive(Clone, Debug)]
struct Node {
    state: State,
    now: SimTime,
    /// Log position of the newest write.
    lsn: u64,
    path: Vec<String>,
}

#[derive(Clone, Debug)]
enum Move {
    Report { region: RegionId, healthy: bool, caught_up: bool },
    Revoke(RegionId),
    Readd(RegionId),
    RevokeWriteStatus,
    Remove(RegionId),
}

fn params() -> FailoverParams {
    FailoverParams::default()
}

fn digest(n: &Node) -> u64 {
    let mut h = DefaultHasher::new();
    serde_json::to_string(&n.state).expect("state serializes").hash(&mut h);
    n.now.hash(&mut h);
    n.lsn.hash(&mut h);
    h.finish()
}

fn report(state: &State, region: RegionId, lsn: u64, now: SimTime, healthy: bool, caught_up: bool) -> PartitionReport {
    PartitionReport {
        region,
        healthy,
        committed_lsn: lsn,
        epoch_seen: if caught_up { state.epoch } else { state.epoch.saturating_sub(1) },
        report_time: now,
        writes_quiesced: state.write_region == region
            && state.status(region) == Some(RegionServiceStatus::ReadWriteWithWritesQuiesced),
    }
}

fn moves(state: &State) -> Vec<Move> {
    let mut out = Vec::new();
    for &r in &state.priority_list {
        for healthy in [true, false] {
            for caught_up in [true, false] {
                out.push(Move::Report { region: r, healthy, caught_up });
            }
        }
        if r != state.write_region {
            out.push(Move::Revoke(r));
            out.push(Move::Readd(r));
            out.push(Move::Remove(r));
        }
    }
    out.push(Move::RevokeWriteStatus);
    out
}

fn apply(n: &Node, m: &Move, step: Duration, intent_id: u64) -> (Node, String) {
    let now = n.now + step;
    let s = &n.state;
    let w = s.write_region;
    let writes_open = s.status(w) == Some(RegionServiceStatus::ReadWrite);
    let lsn = n.lsn + u64::from(writes_open) * 10;
    let lag = |caught_up: bool| if caught_up { lsn } else { lsn.saturating_sub(10) };
    let (edit, label) = match *m {
        Move::Report { region, healthy, caught_up } => (
            StateEdit::report_only(report(s, region, lag(caught_up), now, healthy, caught_up)),
            format!("+{}s {region} reports healthy={healthy} caught_up={caught_up}", step.as_secs()),
        ),
        Move::Revoke(r) => (
            StateEdit {
                lease_requests: vec![LeaseRequest::Revoke { region: r }],
                ..StateEdit::report_only(report(s, w, lsn, now, true, true))
            },
            format!("+{}s {w} asks to revoke {r}", step.as_secs()),
        ),
        Move::Readd(r) => (
            StateEdit {
                lease_requests: vec![LeaseRequest::Readd {
                    region: r,
                    acked_lsn: lsn,
                    reference_lsn: lsn,
                    max_lag: 0,
                }],
                ..StateEdit::report_only(report(s, w, lsn, now, true, true))
            },
            format!("+{}s {w} asks to re-add {r}", step.as_secs()),
        ),
        Move::RevokeWriteStatus => (
            StateEdit {
                intents: vec![TopologyIntent {
                    id: intent_id,
                    kind: IntentKind::RevokeWriteStatus,
                }],
                ..StateEdit::report_only(report(s, w, lsn, now, true, true))
            },
            format!("+{}s operator revokes write status", step.as_secs()),
        ),
        Move::Remove(r) => (
            StateEdit {
                intents: vec![TopologyIntent {
                    id: intent_id,
                    kind: IntentKind::RemoveRegion { region: r },
                }],
                ..StateEdit::report_only(report(s, w, lsn, now, true, true))
            },
            format!("+{}s operator removes {r}", step.as_secs()),
        ),
    };
    let state = transition(s, &edit, now, &params());
    let mut path = n.path.clone();
    path.push(label.clone());
    (Node { state, now, lsn, path }, label)
}

/// Feeds healthy, caught-up reports from every region, with the write
/// region re-adding every eligible reader, until writes are enabled.
fn recovers(n: &Node, rounds: usize) -> bool {
    let mut s = n.state.clone();
    let mut now = n.now;
    let lsn = n.lsn;
    for _ in 0..rounds {
        if s.writes_enabled() {
            return true;
        }
        now += Duration::from_secs(30);
        for r in s.priority_list.clone() {
            let mut edit = StateEdit::report_only(report(&s, r, lsn, now, true, true));
            if r == s.write_region {
                edit.lease_requests = s
                    .priority_list
                    .iter()
                    .filter(|&&x| x != r && !s.active_leases.contains(&x))
                    .map(|&x| LeaseRequest::Readd {
                        region: x,
                        acked_lsn: lsn,
                        reference_lsn: lsn,
                        max_lag: 0,
                    })
                    .collect();
            }
            s = transition(&s, &edit, now, &params());
        }
    }
    s.writes_enabled()
}

/// Explores every edit sequence up to `cfg.depth`.
pub fn enumerate(cfg: &EnumerationConfig) -> Result<EnumerationSummary, Box<EnumerationFailure>> {
    let regions: Vec<RegionId> = (0..cfg.regions).map(RegionId).collect();
    let root = Node {
        state: State::bootstrap(regions, cfg.min_durability, SchedulerStats::default()),
        now: SimTime::ZERO,
        lsn: 0,
        path: Vec::new(),
    };
    let mut seen = HashSet::from([digest(&root)]);
    let mut frontier = vec![root];
    let mut summary = EnumerationSummary {
        states: 1,
        ..Default::default()
    };
    let fail = |problem: String, path: Vec<String>| Box::new(EnumerationFailure { problem, path });
    for depth in 0..cfg.depth {
        let mut next = Vec::new();
        for n in &frontier {
            for m in moves(&n.state) {
                for step in [Duration::from_secs(20), Duration::from_secs(50)] {
                    let (child, _) = apply(n, &m, step, depth as u64 + 1);
                    summary.transitions += 1;
                    if let Err(e) = child.state.check_invariants() {
                        return Err(fail(format!("invariant violated: {e}"), child.path));
                    }
                    if child.state.epoch < n.state.epoch {
                        return Err(fail("epoch went backwards".into(), child.path));
                    }
                    if !seen.insert(digest(&child)) {
                        continue;
                    }
                    if !recovers(&child, cfg.recovery_rounds) {
                        return Err(fail("writes never come back with every region healthy".into(), child.path));
                    }
                    summary.states += 1;
                    summary.max_epoch = summary.max_epoch.max(child.state.epoch);
                    next.push(child);
                }
            }
        }
        frontier = next;
    }
    Ok(summary)
}
