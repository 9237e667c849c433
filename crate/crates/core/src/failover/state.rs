use crate::num::Scalar;
use crate::scheduler::SchedulerStats;
use crate::time::SimTime;
use serde::{Deserialize, Deserializer, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Region identifier. Serialized as an integer; string forms are accepted
/// because JSON object keys are strings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct RegionId(pub u16);

impl<'de> Deserialize<'de> for RegionId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = RegionId;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a region number")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<RegionId, E> {
                u16::try_from(v).map(RegionId).map_err(E::custom)
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<RegionId, E> {
                u16::try_from(v).map(RegionId).map_err(E::custom)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<RegionId, E> {
                v.parse().map(RegionId).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "region-{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionServiceStatus {
    /// Serving reads and receiving replication.
    ReadOnlyReplicationAllowed,
    /// Not yet known to have discarded history from a previous epoch.
    /// Cleared once the region reports the current epoch.
    ReadOnlyReplicationDisallowed,
    ReadWrite,
    /// Write region during a graceful handover: no new writes accepted.
    ReadWriteWithWritesQuiesced,
}

impl RegionServiceStatus {
    pub fn is_write(self) -> bool {
        matches!(
            self,
            RegionServiceStatus::ReadWrite | RegionServiceStatus::ReadWriteWithWritesQuiesced
        )
    }
}

/// Health and progress of one region, attached to that region's edit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub region: RegionId,
    pub healthy: bool,
    pub committed_lsn: u64,
    /// Epoch of the newest write-region history this replica is aligned
    /// with.
    pub epoch_seen: u64,
    pub report_time: SimTime,
    /// Set by a write region that has stopped accepting writes; its
    /// `committed_lsn` is then final.
    #[serde(default)]
    pub writes_quiesced: bool,
}

/// The write region's last position once it stopped accepting writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuiescePoint {
    pub at: SimTime,
    pub lsn: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GracefulFailover {
    pub target: RegionId,
    pub started_at: SimTime,
    pub source_quiesced: Option<QuiescePoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailoverReason {
    WriteRegionUnresponsive,
    GracefulTimeout,
    WriteStatusRevoked,
}

/// An ungraceful failover waiting for a safe moment and enough reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingFailover {
    pub reason: FailoverReason,
    pub triggered_at: SimTime,
    /// Reports older than this may predate the old write region's last
    /// write and are not considered.
    pub safe_after: Option<SimTime>,
    /// For a quiesced write region: when quiescing was requested.
    pub quiesced_since: Option<SimTime>,
    pub exclude_write_region: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailoverKind {
    Graceful,
    Forced(FailoverReason),
}

/// The most recent change of write region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailoverRecord {
    /// Epoch the change started.
    pub epoch: u64,
    pub from: RegionId,
    pub to: RegionId,
    pub kind: FailoverKind,
    /// When the graceful attempt started or the failure was noticed.
    pub triggered_at: SimTime,
    pub decided_at: SimTime,
}

/// Replicated failover manager state of one partition set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailoverManagerState<F = f64> {
    pub write_region: RegionId,
    pub write_region_since: SimTime,
    /// Incremented on every change of write region.
    pub epoch: u64,
    /// Most preferred first.
    pub priority_list: Vec<RegionId>,
    pub region_status: BTreeMap<RegionId, RegionServiceStatus>,
    /// Read regions holding a lease. The write region's lease is implicit.
    pub active_leases: BTreeSet<RegionId>,
    pub min_durability: u32,
    pub latest_reports: BTreeMap<RegionId, PartitionReport>,
    pub graceful: Option<GracefulFailover>,
    pub graceful_failure_count: u32,
    pub last_graceful_attempt: Option<SimTime>,
    pub pending_failover: Option<PendingFailover>,
    pub last_intent_id: u64,
    pub rejected_intents: Vec<u64>,
    pub scheduler_stats: SchedulerStats<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_failover: Option<FailoverRecord>,
    /// Fields written by other versions, preserved verbatim.
    #[serde(flatten)]
    pub extensions: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum InvariantViolation {
    #[error("write region {0} is not configured")]
    UnknownWriteRegion(RegionId),
    #[error("write region {0} does not hold write status")]
    WriteRegionNotWritable(RegionId),
    #[error("region {0} holds write status but is not the write region")]
    ExtraWriter(RegionId),
    #[error("lease held by {0}, which is the write region or not configured")]
    BadLease(RegionId),
    #[error("{leases} read leases plus the write region fall below minimum durability {min}")]
    BelowMinimumDurability { leases: usize, min: u32 },
    #[error("region {0} has no status")]
    MissingStatus(RegionId),
}

/// Rejected intent ids are kept for this many intents.
const REJECTED_INTENT_HISTORY: usize = 64;

impl<F: Scalar> FailoverManagerState<F> {
    /// Initial state: the first region of `priority_list` writes and every
    /// other region holds a read lease.
    pub fn bootstrap(priority_list: Vec<RegionId>, min_durability: u32, stats: SchedulerStats<F>) -> Self {
        assert!(!priority_list.is_empty(), "a partition set needs a region");
        let write_region = priority_list[0];
        let region_status = priority_list
            .iter()
            .map(|&r| {
                let s = if r == write_region {
                    RegionServiceStatus::ReadWrite
                } else {
                    RegionServiceStatus::ReadOnlyReplicationAllowed
                };
                (r, s)
            })
            .collect();
        let active_leases = priority_list[1..].iter().copied().collect();
        FailoverManagerState {
            write_region,
            write_region_since: SimTime::ZERO,
            epoch: 1,
            priority_list,
            region_status,
            active_leases,
            min_durability,
            latest_reports: BTreeMap::new(),
            graceful: None,
            graceful_failure_count: 0,
            last_graceful_attempt: None,
            pending_failover: None,
            last_intent_id: 0,
            rejected_intents: Vec::new(),
            scheduler_stats: stats,
            last_failover: None,
            extensions: BTreeMap::new(),
        }
    }

    pub fn status(&self, r: RegionId) -> Option<RegionServiceStatus> {
        self.region_status.get(&r).copied()
    }

    pub fn priority_of(&self, r: RegionId) -> Option<usize> {
        self.priority_list.iter().position(|&x| x == r)
    }

    pub fn is_configured(&self, r: RegionId) -> bool {
        self.region_status.contains_key(&r)
    }

    /// Whether writes are accepted: a write region exists with plain
    /// read-write status and no failover is pending.
    pub fn writes_enabled(&self) -> bool {
        self.status(self.write_region) == Some(RegionServiceStatus::ReadWrite)
            && self.pending_failover.is_none()
    }

    pub(crate) fn reject_intent(&mut self, id: u64) {
        self.rejected_intents.push(id);
        if self.rejected_intents.len() > REJECTED_INTENT_HISTORY {
            let excess = self.rejected_intents.len() - REJECTED_INTENT_HISTORY;
            self.rejected_intents.drain(..excess);
        }
    }

    /// Whether intent `id` has been applied (`Some(true)`), rejected
    /// (`Some(false)`) or not yet seen (`None`).
    pub fn intent_outcome(&self, id: u64) -> Option<bool> {
        if id > self.last_intent_id {
            None
        } else {
            Some(!self.rejected_intents.contains(&id))
        }
    }

    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let w = self.write_region;
        if !self.priority_list.contains(&w) {
            return Err(InvariantViolation::UnknownWriteRegion(w));
        }
        for r in &self.priority_list {
            let s = self.status(*r).ok_or(InvariantViolation::MissingStatus(*r))?;
            if *r == w && !s.is_write() {
                return Err(InvariantViolation::WriteRegionNotWritable(w));
            }
            if *r != w && s.is_write() {
                return Err(InvariantViolation::ExtraWriter(*r));
            }
        }
        for r in &self.active_leases {
            if *r == w || !self.priority_list.contains(r) {
                return Err(InvariantViolation::BadLease(*r));
            }
        }
        if self.active_leases.len() + 1 < self.min_durability as usize {
            return Err(InvariantViolation::BelowMinimumDurability {
                leases: self.active_leases.len(),
                min: self.min_durability,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regions(n: u16) -> Vec<RegionId> {
        (0..n).map(RegionId).collect()
    }

    #[test]
    fn bootstrap_is_valid() {
        let s = FailoverManagerState::<f64>::bootstrap(regions(3), 2, SchedulerStats::default());
        s.check_invariants().unwrap();
        assert_eq!(s.write_region, RegionId(0));
        assert_eq!(s.active_leases.len(), 2);
        assert!(s.writes_enabled());
    }

    #[test]
    fn json_round_trip_preserves_unknown_fields() {
        let s = FailoverManagerState::<f64>::bootstrap(regions(2), 1, SchedulerStats::default());
        let mut v = serde_json::to_value(&s).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("added_later".into(), serde_json::json!({"x": [1, 2]}));
        let back: FailoverManagerState<f64> = serde_json::from_value(v).unwrap();
        assert_eq!(back.extensions["added_later"], serde_json::json!({"x": [1, 2]}));
        let again = serde_json::to_value(&back).unwrap();
        assert_eq!(again["added_later"]["x"][1], 2);
        let mut cleared = back.clone();
        cleared.extensions.clear();
        assert_eq!(cleared, s);
    }

    #[test]
    fn region_ids_as_map_keys_round_trip() {
        let mut s = FailoverManagerState::<f32>::bootstrap(regions(3), 1, SchedulerStats::default());
        s.latest_reports.insert(
            RegionId(2),
            PartitionReport {
                region: RegionId(2),
                healthy: true,
                committed_lsn: 5,
                epoch_seen: 1,
                report_time: SimTime::from_secs(3),
                writes_quiesced: false,
            },
        );
        let json = serde_json::to_string(&s).unwrap();
        let back: FailoverManagerState<f32> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn invariant_violations_detected() {
        let mut s = FailoverManagerState::<f64>::bootstrap(regions(3), 3, SchedulerStats::default());
        s.active_leases.remove(&RegionId(2));
        assert!(matches!(
            s.check_invariants(),
            Err(InvariantViolation::BelowMinimumDurability { .. })
        ));
        let mut s = FailoverManagerState::<f64>::bootstrap(regions(3), 1, SchedulerStats::default());
        s.region_status.insert(RegionId(1), RegionServiceStatus::ReadWrite);
        assert_eq!(s.check_invariants(), Err(InvariantViolation::ExtraWriter(RegionId(1))));
    }
}
