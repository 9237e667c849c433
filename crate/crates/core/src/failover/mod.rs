//! Per-partition failover manager.
//!
//! The failover manager state is one register per partition set, edited by
//! every region of that partition set through CAS Paxos. Each edit folds in
//! the editing region's health report and then advances the state machine:
//! it detects an unresponsive write region, picks a failover target,
//! drives graceful failback to the preferred region and grants or denies
//! read-lease changes. Regions map the resulting state to local actions.

mod actions;
mod intent;
mod lease;
mod progress;
mod state;
mod transition;
mod updater;

pub use actions::{derive_actions, LocalRole, ReplicaAction, ReplicaView};
pub use intent::{apply_topology_intent, IntentKind, IntentRejected, TopologyIntent};
pub use lease::{readd_lease, request_lease_revocation, LeaseDenied, LeaseRequest};
pub use progress::{truncate_false_progress, FullReseedRequired, ProgressError, ProgressTable};
pub use state::{
    FailoverKind, FailoverManagerState, FailoverReason, FailoverRecord, GracefulFailover, InvariantViolation, PartitionReport,
    PendingFailover, QuiescePoint, RegionId, RegionServiceStatus,
};
pub use transition::{
    graceful_backoff_allowed, graceful_backoff_interval, select_failover_target, transition,
    StateEdit,
};
pub use updater::{run_state_update, AcceptorSet, UpdateError, UpdateOutcome};

use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Timing knobs of the failover manager. These are configuration, not part
/// of the replicated state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailoverParams {
    /// A write region whose last report is this old is presumed lost.
    pub lease_window: Duration,
    /// How long to wait for reports from every leased region before settling
    /// for a majority of them.
    pub target_wait: Duration,
    /// A graceful failover that has not completed after this long is
    /// abandoned.
    pub graceful_timeout: Duration,
    pub graceful_backoff_base: Duration,
    /// Backoff grows as `base * 2^min(failures, cap_exponent)`.
    pub graceful_backoff_cap_exponent: u32,
    /// Disables the graceful backoff gate. Only useful to demonstrate what
    /// the gate protects against.
    pub graceful_backoff_enabled: bool,
}

impl Default for FailoverParams {
    fn default() -> Self {
        FailoverParams {
            lease_window: Duration::from_secs(45),
            target_wait: Duration::from_secs(30),
            graceful_timeout: Duration::from_secs(60),
            graceful_backoff_base: Duration::from_secs(60),
            graceful_backoff_cap_exponent: 6,
            graceful_backoff_enabled: true,
        }
    }
}
