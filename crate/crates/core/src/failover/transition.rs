use super::intent::{apply_topology_intent, TopologyIntent};
use super::lease::{readd_lease, request_lease_revocation, LeaseRequest};
use super::state::{
    FailoverKind, FailoverManagerState, FailoverReason, FailoverRecord, GracefulFailover, PartitionReport, PendingFailover,
    QuiescePoint, RegionId, RegionServiceStatus,
};
use super::FailoverParams;
use crate::num::Scalar;
use crate::scheduler::record_phase2_duration;
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Everything one region contributes to an edit of the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEdit {
    pub report: PartitionReport,
    #[serde(default)]
    pub intents: Vec<TopologyIntent>,
    /// Honoured only when the editor is the write region.
    #[serde(default)]
    pub lease_requests: Vec<LeaseRequest>,
    /// Phase-2 duration of the editor's previous conflict-free update.
    #[serde(default)]
    pub phase2_sample: Option<Duration>,
}

impl StateEdit {
    pub fn report_only(report: PartitionReport) -> Self {
        StateEdit {
            report,
            intents: Vec::new(),
            lease_requests: Vec::new(),
            phase2_sample: None,
        }
    }
}

/// The change function applied by every CAS Paxos round on the failover
/// manager register.
pub fn transition<F: Scalar>(
    state: &FailoverManagerState<F>,
    edit: &StateEdit,
    now: SimTime,
    params: &FailoverParams,
) -> FailoverManagerState<F> {
    let mut s = state.clone();
    incorporate_report(&mut s, &edit.report);
    if let Some(d) = edit.phase2_sample {
        s.scheduler_stats = record_phase2_duration(&s.scheduler_stats, d);
    }

    let mut intents: Vec<&TopologyIntent> = edit.intents.iter().collect();
    intents.sort_by_key(|i| i.id);
    for intent in intents {
        if intent.id <= s.last_intent_id {
            continue;
        }
        match apply_topology_intent(&s, intent, now) {
            Ok(next) => s = next,
            Err(_) => {
                s.last_intent_id = intent.id;
                s.reject_intent(intent.id);
            }
        }
    }

    if edit.report.region == s.write_region && s.pending_failover.is_none() {
        for req in &edit.lease_requests {
            let outcome = match *req {
                LeaseRequest::Revoke { region } => request_lease_revocation(&s, region),
                LeaseRequest::Readd {
                    region,
                    acked_lsn,
                    reference_lsn,
                    max_lag,
                } => readd_lease(&s, region, acked_lsn, reference_lsn, max_lag),
            };
            if let Ok(next) = outcome {
                s = next;
            }
        }
    }

    advance(&mut s, now, params);
    s
}

fn incorporate_report<F: Scalar>(s: &mut FailoverManagerState<F>, r: &PartitionReport) {
    if !s.is_configured(r.region) {
        return;
    }
    if s
        .latest_reports
        .get(&r.region)
        .is_some_and(|old| old.report_time > r.report_time)
    {
        return;
    }
    s.latest_reports.insert(r.region, r.clone());
    if r.epoch_seen >= s.epoch
        && s.status(r.region) == Some(RegionServiceStatus::ReadOnlyReplicationDisallowed)
    {
        s.region_status
            .insert(r.region, RegionServiceStatus::ReadOnlyReplicationAllowed);
    }
    if r.region != s.write_region || !r.writes_quiesced {
        return;
    }
    if let Some(g) = &mut s.graceful {
        if g.source_quiesced.is_none() && r.report_time >= g.started_at {
            g.source_quiesced = Some(QuiescePoint {
                at: r.report_time,
                lsn: r.committed_lsn,
            });
        }
    }
    if let Some(p) = &mut s.pending_failover {
        if p.safe_after.is_none() && p.quiesced_since.is_some_and(|q| r.report_time >= q) {
            p.safe_after = Some(r.report_time);
        }
    }
}

/// Last time the write region is known to have been alive, and whether it
/// declared itself unhealthy then.
fn write_region_last_seen<F: Scalar>(s: &FailoverManagerState<F>) -> (SimTime, bool) {
    match s.latest_reports.get(&s.write_region) {
        Some(r) if r.report_time >= s.write_region_since => (r.report_time, r.healthy),
        _ => (s.write_region_since, true),
    }
}

/// The write region stops accepting writes by this time unless it
/// completes another edit first.
fn write_lease_expiry<F: Scalar>(s: &FailoverManagerState<F>, params: &FailoverParams) -> SimTime {
    write_region_last_seen(s).0 + params.lease_window
}

fn write_region_unresponsive<F: Scalar>(
    s: &FailoverManagerState<F>,
    now: SimTime,
    params: &FailoverParams,
) -> bool {
    let (last, healthy) = write_region_last_seen(s);
    !healthy || now - last >= params.lease_window
}

fn is_fresh<'a, F: Scalar>(
    s: &'a FailoverManagerState<F>,
    r: RegionId,
    since: SimTime,
    now: SimTime,
    params: &FailoverParams,
) -> Option<&'a PartitionReport> {
    let rep = s.latest_reports.get(&r)?;
    let status_ok = r == s.write_region
        || s.status(r) == Some(RegionServiceStatus::ReadOnlyReplicationAllowed);
    (status_ok
        && rep.healthy
        && rep.epoch_seen == s.epoch
        && rep.report_time >= since
        && now - rep.report_time < params.lease_window)
        .then_some(rep)
}

/// Picks the region to take over writes for a pending failover, if it can
/// be decided yet.
///
/// Only reports made after the old write region can no longer write are
/// considered. The decision is made once every leased read region has such
/// a report, or after `target_wait` once a majority has. Among the eligible
/// regions the one with the highest committed position wins, ties going to
/// the more preferred region. The current write region is eligible unless
/// its write status was revoked.
pub fn select_failover_target<F: Scalar>(
    state: &FailoverManagerState<F>,
    now: SimTime,
    params: &FailoverParams,
) -> Option<RegionId> {
    let p = state.pending_failover.as_ref()?;
    let expiry = write_lease_expiry(state, params);
    let safe = match p.safe_after {
        Some(t) => t.min(expiry),
        None if now >= expiry => expiry,
        None => return None,
    };
    let fresh_leased: Vec<&PartitionReport> = state
        .active_leases
        .iter()
        .filter_map(|&r| is_fresh(state, r, safe, now, params))
        .collect();
    let all_reported = fresh_leased.len() == state.active_leases.len();
    let waited = now - p.triggered_at >= params.target_wait;
    let majority = state.active_leases.len() / 2 + 1;
    if !(all_reported || (waited && fresh_leased.len() >= majority)) {
        return None;
    }
    let mut candidates = fresh_leased;
    if !p.exclude_write_region {
        if let Some(w) = is_fresh(state, state.write_region, safe, now, params) {
            candidates.push(w);
        }
    }
    candidates
        .into_iter()
        .max_by_key(|r| {
            let rank = state.priority_of(r.region).unwrap_or(usize::MAX);
            (r.committed_lsn, std::cmp::Reverse(rank))
        })
        .map(|r| r.region)
}

/// Minimum spacing between graceful attempts after `failures` consecutive
/// failures: `base * 2^min(failures, cap)`.
pub fn graceful_backoff_interval(failures: u32, params: &FailoverParams) -> Duration {
    let exp = failures.min(params.graceful_backoff_cap_exponent).min(31);
    params.graceful_backoff_base.saturating_mul(1u32 << exp)
}

pub fn graceful_backoff_allowed<F: Scalar>(
    state: &FailoverManagerState<F>,
    now: SimTime,
    params: &FailoverParams,
) -> bool {
    if !params.graceful_backoff_enabled {
        return true;
    }
    match state.last_graceful_attempt {
        None => true,
        Some(last) => now - last >= graceful_backoff_interval(state.graceful_failure_count, params),
    }
}

fn advance<F: Scalar>(s: &mut FailoverManagerState<F>, now: SimTime, params: &FailoverParams) {
    if let Some(g) = s.graceful.clone() {
        if graceful_complete(s, &g, now, params) {
            complete_graceful(s, &g, now);
        } else if write_region_unresponsive(s, now, params)
            || now - g.started_at >= params.graceful_timeout
        {
            s.graceful = None;
            s.graceful_failure_count = s.graceful_failure_count.saturating_add(1);
            s.pending_failover = Some(PendingFailover {
                reason: FailoverReason::GracefulTimeout,
                triggered_at: now,
                safe_after: g.source_quiesced.map(|q| q.at),
                quiesced_since: Some(g.started_at),
                exclude_write_region: false,
            });
        }
    }

    if s.pending_failover.is_none() && s.graceful.is_none() && write_region_unresponsive(s, now, params) {
        s.pending_failover = Some(PendingFailover {
            reason: FailoverReason::WriteRegionUnresponsive,
            triggered_at: now,
            safe_after: Some(write_lease_expiry(s, params)),
            quiesced_since: None,
            exclude_write_region: false,
        });
    }

    if s.pending_failover.is_some() {
        if let Some(target) = select_failover_target(s, now, params) {
            fail_over_to(s, target, now);
        }
    }

    if s.pending_failover.is_none() && s.graceful.is_none() {
        maybe_start_graceful(s, now, params);
    }
}

fn graceful_complete<F: Scalar>(
    s: &FailoverManagerState<F>,
    g: &GracefulFailover,
    now: SimTime,
    params: &FailoverParams,
) -> bool {
    let Some(q) = g.source_quiesced else {
        return false;
    };
    s.active_leases.contains(&g.target)
        && is_fresh(s, g.target, q.at, now, params).is_some_and(|r| r.committed_lsn >= q.lsn)
}

fn complete_graceful<F: Scalar>(s: &mut FailoverManagerState<F>, g: &GracefulFailover, now: SimTime) {
    let old = s.write_region;
    let target = g.target;
    s.last_failover = Some(FailoverRecord {
        epoch: s.epoch + 1,
        from: old,
        to: target,
        kind: FailoverKind::Graceful,
        triggered_at: g.started_at,
        decided_at: now,
    });
    s.write_region = target;
    s.write_region_since = now;
    s.epoch += 1;
    s.active_leases.remove(&target);
    s.active_leases.insert(old);
    s.region_status.insert(target, RegionServiceStatus::ReadWrite);
    s.region_status
        .insert(old, RegionServiceStatus::ReadOnlyReplicationAllowed);
    s.graceful = None;
    s.graceful_failure_count = 0;
}

fn fail_over_to<F: Scalar>(s: &mut FailoverManagerState<F>, target: RegionId, now: SimTime) {
    let pending = s.pending_failover.take();
    s.graceful = None;
    let old = s.write_region;
    if target == old {
        s.region_status.insert(old, RegionServiceStatus::ReadWrite);
        return;
    }
    if let Some(p) = pending {
        s.last_failover = Some(FailoverRecord {
            epoch: s.epoch + 1,
            from: old,
            to: target,
            kind: FailoverKind::Forced(p.reason),
            triggered_at: p.triggered_at,
            decided_at: now,
        });
    }
    s.write_region = target;
    s.write_region_since = now;
    s.epoch += 1;
    s.active_leases.remove(&target);
    s.region_status.insert(target, RegionServiceStatus::ReadWrite);
    s.region_status
        .insert(old, RegionServiceStatus::ReadOnlyReplicationDisallowed);
    // The old write region's implicit lease is gone. If that leaves too few
    // copies, it keeps a lease so new writes wait for it to rejoin.
    if s.active_leases.len() + 1 < s.min_durability as usize {
        s.active_leases.insert(old);
    }
}

fn maybe_start_graceful<F: Scalar>(s: &mut FailoverManagerState<F>, now: SimTime, params: &FailoverParams) {
    let w = s.write_region;
    if s.status(w) != Some(RegionServiceStatus::ReadWrite) {
        return;
    }
    if is_fresh(s, w, s.write_region_since, now, params).is_none() {
        return;
    }
    let Some(w_rank) = s.priority_of(w) else {
        return;
    };
    let target = s.priority_list[..w_rank].iter().copied().find(|&r| {
        s.active_leases.contains(&r) && is_fresh(s, r, SimTime::ZERO, now, params).is_some()
    });
    let Some(target) = target else {
        return;
    };
    if !graceful_backoff_allowed(s, now, params) {
        return;
    }
    s.graceful = Some(GracefulFailover {
        target,
        started_at: now,
        source_quiesced: None,
    });
    s.last_graceful_attempt = Some(now);
    s.region_status
        .insert(w, RegionServiceStatus::ReadWriteWithWritesQuiesced);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::SchedulerStats;

    const A: RegionId = RegionId(0);
    const B: RegionId = RegionId(1);
    const C: RegionId = RegionId(2);

    fn params() -> FailoverParams {
        FailoverParams::default()
    }

    fn base() -> FailoverManagerState<f64> {
        FailoverManagerState::bootstrap(vec![A, B, C], 1, SchedulerStats::default())
    }

    fn report(region: RegionId, lsn: u64, epoch: u64, at_s: u64) -> PartitionReport {
        PartitionReport {
            region,
            healthy: true,
            committed_lsn: lsn,
            epoch_seen: epoch,
            report_time: SimTime::from_secs(at_s),
            writes_quiesced: false,
        }
    }

    fn edit(r: PartitionReport) -> StateEdit {
        StateEdit::report_only(r)
    }

    fn at(s: u64) -> SimTime {
        SimTime::from_secs(s)
    }

    #[test]
    fn healthy_write_region_is_left_alone() {
        let s = transition(&base(), &edit(report(A, 10, 1, 10)), at(10), &params());
        assert_eq!(s.write_region, A);
        assert_eq!(s.epoch, 1);
        assert!(s.pending_failover.is_none());
        assert!(s.writes_enabled());
    }

    #[test]
    fn stale_write_region_fails_over_to_most_preferred_tie() {
        let p = params();
        let mut s = transition(&base(), &edit(report(A, 100, 1, 10)), at(10), &p);
        // A is last seen at 10 s; its lease runs out at 55 s.
        s = transition(&s, &edit(report(C, 100, 1, 60)), at(60), &p);
        assert_eq!(s.write_region, A, "B has not reported since A went quiet");
        assert!(s.pending_failover.is_some());
        s = transition(&s, &edit(report(B, 100, 1, 61)), at(61), &p);
        assert_eq!(s.write_region, B);
        assert_eq!(s.epoch, 2);
        assert!(!s.active_leases.contains(&B));
        assert_eq!(s.status(A), Some(RegionServiceStatus::ReadOnlyReplicationDisallowed));
        let rec = s.last_failover.unwrap();
        assert_eq!((rec.from, rec.to, rec.epoch), (A, B, 2));
        assert_eq!(rec.kind, FailoverKind::Forced(FailoverReason::WriteRegionUnresponsive));
        assert_eq!((rec.triggered_at, rec.decided_at), (at(60), at(61)));
        s.check_invariants().unwrap();
    }

    #[test]
    fn target_selection_waits_then_prefers_highest_lsn() {
        let p = params();
        let mut s = transition(&base(), &edit(report(A, 80, 1, 0)), at(0), &p);
        s = transition(&s, &edit(report(B, 90, 1, 50)), at(50), &p);
        assert!(s.pending_failover.is_some());
        assert_eq!(s.write_region, A, "C missing and the wait has not elapsed");
        s = transition(&s, &edit(report(C, 100, 1, 60)), at(60), &p);
        assert_eq!(s.write_region, C, "highest committed lsn wins");
    }

    #[test]
    fn majority_suffices_after_target_wait() {
        let p = params();
        let s4 = FailoverManagerState::<f64>::bootstrap(
            vec![A, B, C, RegionId(3)],
            1,
            SchedulerStats::default(),
        );
        let mut s = transition(&s4, &edit(report(A, 5, 1, 0)), at(0), &p);
        s = transition(&s, &edit(report(B, 5, 1, 50)), at(50), &p);
        s = transition(&s, &edit(report(C, 5, 1, 55)), at(55), &p);
        assert_eq!(s.write_region, A);
        s = transition(&s, &edit(report(C, 5, 1, 81)), at(81), &p);
        assert_eq!(s.write_region, B);
    }

    #[test]
    fn reports_before_lease_expiry_are_ignored() {
        let p = params();
        let mut s = transition(&base(), &edit(report(A, 5, 1, 10)), at(10), &p);
        s = transition(&s, &edit(report(B, 5, 1, 40)), at(40), &p);
        s = transition(&s, &edit(report(C, 5, 1, 58)), at(58), &p);
        assert_eq!(s.write_region, A);
        assert!(s.pending_failover.is_some());
    }

    #[test]
    fn recovered_write_region_can_resume() {
        let p = params();
        let mut s = transition(&base(), &edit(report(A, 100, 1, 0)), at(0), &p);
        s = transition(&s, &edit(report(B, 90, 1, 50)), at(50), &p);
        s = transition(&s, &edit(report(A, 100, 1, 52)), at(52), &p);
        s = transition(&s, &edit(report(C, 90, 1, 53)), at(53), &p);
        assert_eq!(s.write_region, A);
        assert_eq!(s.epoch, 1);
        assert!(s.pending_failover.is_none());
        assert!(s.writes_enabled());
    }

    fn failed_over_to_b() -> FailoverManagerState<f64> {
        let p = params();
        let mut s = transition(&base(), &edit(report(A, 100, 1, 0)), at(0), &p);
        s = transition(&s, &edit(report(C, 100, 1, 50)), at(50), &p);
        s = transition(&s, &edit(report(B, 100, 1, 51)), at(51), &p);
        assert_eq!(s.write_region, B);
        s
    }

    #[test]
    fn graceful_failback_to_preferred_region() {
        let p = params();
        let mut s = failed_over_to_b();
        s = transition(&s, &edit(report(B, 110, 2, 90)), at(90), &p);
        // A returns, aligns with epoch 2 and is re-leased by B.
        s = transition(&s, &edit(report(A, 100, 2, 100)), at(100), &p);
        assert_eq!(s.status(A), Some(RegionServiceStatus::ReadOnlyReplicationAllowed));
        let mut readd = edit(report(B, 120, 2, 110));
        readd.lease_requests.push(LeaseRequest::Readd {
            region: A,
            acked_lsn: 120,
            reference_lsn: 120,
            max_lag: 0,
        });
        s = transition(&s, &readd, at(110), &p);
        assert!(s.active_leases.contains(&A));
        s = transition(&s, &edit(report(A, 120, 2, 115)), at(115), &p);
        let g = s.graceful.clone().expect("graceful starts once A is fresh");
        assert_eq!(g.target, A);
        assert_eq!(s.status(B), Some(RegionServiceStatus::ReadWriteWithWritesQuiesced));
        let mut q = report(B, 125, 2, 120);
        q.writes_quiesced = true;
        s = transition(&s, &edit(q), at(120), &p);
        assert_eq!(s.graceful.as_ref().unwrap().source_quiesced.unwrap().lsn, 125);
        s = transition(&s, &edit(report(A, 124, 2, 121)), at(121), &p);
        assert_eq!(s.write_region, B, "target still behind");
        s = transition(&s, &edit(report(A, 125, 2, 122)), at(122), &p);
        assert_eq!(s.write_region, A);
        assert_eq!(s.epoch, 3);
        assert_eq!(s.graceful_failure_count, 0);
        assert!(s.active_leases.contains(&B));
        s.check_invariants().unwrap();
    }

    #[test]
    fn graceful_timeout_counts_failure_and_backs_off() {
        let p = params();
        let mut s = failed_over_to_b();
        s = transition(&s, &edit(report(B, 110, 2, 90)), at(90), &p);
        s = transition(&s, &edit(report(A, 100, 2, 100)), at(100), &p);
        s.active_leases.insert(A);
        s = transition(&s, &edit(report(A, 100, 2, 101)), at(101), &p);
        assert!(s.graceful.is_some());
        let mut q = report(B, 130, 2, 105);
        q.writes_quiesced = true;
        s = transition(&s, &edit(q), at(105), &p);
        // A never catches up; B keeps reporting.
        let mut q = report(B, 130, 2, 140);
        q.writes_quiesced = true;
        s = transition(&s, &edit(q), at(140), &p);
        s = transition(&s, &edit(report(A, 100, 2, 150)), at(150), &p);
        s = transition(&s, &edit(report(C, 128, 2, 155)), at(155), &p);
        let mut q = report(B, 130, 2, 161);
        q.writes_quiesced = true;
        s = transition(&s, &edit(q), at(161), &p);
        assert_eq!(s.graceful_failure_count, 1);
        assert_eq!(s.write_region, B, "B holds the highest lsn and resumes");
        assert!(s.writes_enabled());
        assert!(s.graceful.is_none());
        s = transition(&s, &edit(report(A, 100, 2, 200)), at(200), &p);
        assert!(s.graceful.is_none(), "gate closed until 101 + 120 s");
        s = transition(&s, &edit(report(B, 130, 2, 215)), at(215), &p);
        s = transition(&s, &edit(report(A, 100, 2, 221)), at(221), &p);
        assert!(s.graceful.is_some());
    }

    #[test]
    fn backoff_interval_examples() {
        let p = params();
        assert_eq!(graceful_backoff_interval(0, &p), Duration::from_secs(60));
        assert_eq!(graceful_backoff_interval(3, &p), Duration::from_secs(480));
        assert_eq!(graceful_backoff_interval(6, &p), Duration::from_secs(3840));
        assert_eq!(graceful_backoff_interval(30, &p), Duration::from_secs(3840));
        let mut s = base();
        s.graceful_failure_count = 3;
        s.last_graceful_attempt = Some(at(1000));
        assert!(!graceful_backoff_allowed(&s, at(1200), &p));
        assert!(graceful_backoff_allowed(&s, at(1480), &p));
    }

    #[test]
    fn lease_requests_only_from_write_region() {
        let p = params();
        let mut e = edit(report(B, 0, 1, 1));
        e.lease_requests.push(LeaseRequest::Revoke { region: C });
        let s = transition(&base(), &e, at(1), &p);
        assert!(s.active_leases.contains(&C));
        let mut e = edit(report(A, 0, 1, 2));
        e.lease_requests.push(LeaseRequest::Revoke { region: C });
        let s = transition(&s, &e, at(2), &p);
        assert!(!s.active_leases.contains(&C));
    }

    #[test]
    fn old_write_region_keeps_lease_when_needed_for_durability() {
        let p = params();
        let two = FailoverManagerState::<f64>::bootstrap(vec![A, B], 2, SchedulerStats::default());
        let mut s = transition(&two, &edit(report(A, 5, 1, 0)), at(0), &p);
        s = transition(&s, &edit(report(B, 5, 1, 50)), at(50), &p);
        assert_eq!(s.write_region, B);
        assert!(s.active_leases.contains(&A));
        s.check_invariants().unwrap();
    }
}
