use super::progress::{truncate_false_progress, ProgressTable};
use super::state::{FailoverManagerState, RegionId, RegionServiceStatus};
use crate::num::Scalar;
use serde::{Deserialize, Serialize};

/// What a region's replica is currently doing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalRole {
    Unassigned,
    WritePrimary { epoch: u64 },
    Quiesced { epoch: u64 },
    ReadSecondary,
}

/// Local facts a region combines with the learned state.
#[derive(Clone, Copy, Debug)]
pub struct ReplicaView<'a> {
    pub role: LocalRole,
    pub local_max_lsn: u64,
    /// Epoch of the newest local log entry.
    pub local_last_epoch: Option<u64>,
    /// Progress of the current write region's history, when known.
    pub authoritative_progress: Option<&'a ProgressTable>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplicaAction {
    BecomeWritePrimary { epoch: u64 },
    BecomeReadSecondary,
    QuiesceWrites,
    ResumeWrites,
    TruncateFalseProgress { to_lsn: u64 },
    FullReseed,
    NoOp,
}

/// Maps the learned state to the steps `my_region` must take, in order.
/// Returns `[NoOp]` when the replica already matches the state.
pub fn derive_actions<F: Scalar>(
    state: &FailoverManagerState<F>,
    my_region: RegionId,
    view: &ReplicaView<'_>,
) -> Vec<ReplicaAction> {
    let mut actions = Vec::new();
    let epoch = state.epoch;
    match state.status(my_region) {
        Some(RegionServiceStatus::ReadWrite) if my_region == state.write_region => match view.role {
            LocalRole::WritePrimary { epoch: e } if e == epoch => {}
            LocalRole::Quiesced { epoch: e } if e == epoch => actions.push(ReplicaAction::ResumeWrites),
            _ => actions.push(ReplicaAction::BecomeWritePrimary { epoch }),
        },
        Some(RegionServiceStatus::ReadWriteWithWritesQuiesced) if my_region == state.write_region => {
            match view.role {
                LocalRole::Quiesced { epoch: e } if e == epoch => {}
                LocalRole::WritePrimary { epoch: e } if e == epoch => {
                    actions.push(ReplicaAction::QuiesceWrites)
                }
                _ => {
                    actions.push(ReplicaAction::BecomeWritePrimary { epoch });
                    actions.push(ReplicaAction::QuiesceWrites);
                }
            }
        }
        _ => {
            if let (Some(table), Some(last)) = (view.authoritative_progress, view.local_last_epoch) {
                if last < epoch {
                    match truncate_false_progress(table, view.local_max_lsn, last) {
                        Ok(to) if to < view.local_max_lsn => {
                            actions.push(ReplicaAction::TruncateFalseProgress { to_lsn: to })
                        }
                        Ok(_) => {}
                        Err(_) => actions.push(ReplicaAction::FullReseed),
                    }
                }
            }
            if view.role != LocalRole::ReadSecondary {
                actions.push(ReplicaAction::BecomeReadSecondary);
            }
        }
    }
    if actions.is_empty() {
        actions.push(ReplicaAction::NoOp);
    }
    actions
}
