use super::state::{FailoverManagerState, FailoverReason, PendingFailover, RegionId, RegionServiceStatus};
use crate::num::Scalar;
use crate::time::SimTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Operator request carried by the next edit of any region. Ids increase
/// monotonically; an intent at or below the last applied id is ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyIntent {
    pub id: u64,
    pub kind: IntentKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntentKind {
    /// Adds a read region at `priority` (0 is most preferred).
    AddRegion { region: RegionId, priority: usize },
    RemoveRegion { region: RegionId },
    /// Takes write status away from the current write region, e.g. when
    /// its service is degraded in a way health reports do not show.
    RevokeWriteStatus,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum IntentRejected {
    #[error("intent {0} was already processed")]
    Stale(u64),
    #[error("region {0} is already configured")]
    AlreadyPresent(RegionId),
    #[error("region {0} is not configured")]
    Unknown(RegionId),
    #[error("the write region cannot be removed")]
    WriteRegion,
    #[error("removing {0} would leave fewer leases than minimum durability")]
    BelowMinimumDurability(RegionId),
    #[error("a failover is already pending")]
    FailoverPending,
    #[error("no leased read region could take over writes")]
    NoFailoverTarget,
}

pub fn apply_topology_intent<F: Scalar>(
    state: &FailoverManagerState<F>,
    intent: &TopologyIntent,
    now: SimTime,
) -> Result<FailoverManagerState<F>, IntentRejected> {
    if intent.id <= state.last_intent_id {
        return Err(IntentRejected::Stale(intent.id));
    }
    let mut s = state.clone();
    match &intent.kind {
        IntentKind::AddRegion { region, priority } => {
            if s.is_configured(*region) {
                return Err(IntentRejected::AlreadyPresent(*region));
            }
            let at = (*priority).min(s.priority_list.len());
            s.priority_list.insert(at, *region);
            // The new region has no data yet; it earns a lease once caught up.
            s.region_status
                .insert(*region, RegionServiceStatus::ReadOnlyReplicationAllowed);
        }
        IntentKind::RemoveRegion { region } => {
            if !s.is_configured(*region) {
                return Err(IntentRejected::Unknown(*region));
            }
            if *region == s.write_region {
                return Err(IntentRejected::WriteRegion);
            }
            if s.active_leases.contains(region) && s.active_leases.len() < s.min_durability as usize {
                return Err(IntentRejected::BelowMinimumDurability(*region));
            }
            // A pending failover may need this region as its target.
            if s.active_leases.contains(region) && s.pending_failover.is_some() {
                return Err(IntentRejected::FailoverPending);
            }
            s.priority_list.retain(|r| r != region);
            s.region_status.remove(region);
            s.active_leases.remove(region);
            s.latest_reports.remove(region);
            if s.graceful.as_ref().is_some_and(|g| g.target == *region) {
                s.graceful = None;
                s.region_status
                    .insert(s.write_region, RegionServiceStatus::ReadWrite);
            }
        }
        IntentKind::RevokeWriteStatus => {
            if s.pending_failover.is_some() {
                return Err(IntentRejected::FailoverPending);
            }
            // With no leased reader the failover could never pick a target
            // and writes would stay quiesced.
            if s.active_leases.is_empty() {
                return Err(IntentRejected::NoFailoverTarget);
            }
            s.graceful = None;
            s.region_status
                .insert(s.write_region, RegionServiceStatus::ReadWriteWithWritesQuiesced);
            s.pending_failover = Some(PendingFailover {
                reason: FailoverReason::WriteStatusRevoked,
                triggered_at: now,
                safe_after: None,
                quiesced_since: Some(now),
                exclude_write_region: true,
            });
        }
    }
    s.last_intent_id = intent.id;
    Ok(s)
}
