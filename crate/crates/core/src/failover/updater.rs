use super::actions::{derive_actions, ReplicaAction, ReplicaView};
use super::state::{FailoverManagerState, RegionId};
use super::transition::{transition, StateEdit};
use super::FailoverParams;
use crate::caspaxos::{
    AcceptorId, LeaderStateMachine, NakOutcome, PaxosMessage, Phase1bOutcome, Phase2bOutcome,
    RegisterValue,
};
use crate::num::Scalar;
use crate::store::{acceptor_key, persist_acceptor_message, DocumentStore, PersistError};
use crate::time::SimTime;
use thiserror::Error;

/// The acceptor stores of one register; acceptor `i` lives in `stores[i]`.
pub struct AcceptorSet<'a, S> {
    pub register: &'a str,
    pub stores: &'a [S],
}

#[derive(Clone, Debug)]
pub struct UpdateOutcome<F> {
    pub value: RegisterValue<FailoverManagerState<F>>,
    pub actions: Vec<ReplicaAction>,
    pub attempts: u32,
    pub conflicts: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UpdateError {
    #[error("no quorum of acceptors reachable after {attempts} attempts")]
    NoQuorum { attempts: u32 },
    #[error("gave up after {0} conflicting attempts")]
    Exhausted(u32),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

/// Runs one edit of the failover manager register to completion against
/// directly reachable stores: prepare, transition the newest value, accept,
/// then map the chosen state to local actions. Conflicting proposers cause
/// an immediate retry with a higher ballot, up to `max_attempts` rounds.
#[allow(clippy::too_many_arguments)]
pub fn run_state_update<F, S>(
    leader: &mut LeaderStateMachine<FailoverManagerState<F>>,
    acceptors: &AcceptorSet<'_, S>,
    bootstrap: &FailoverManagerState<F>,
    edit: &StateEdit,
    my_region: RegionId,
    view: &ReplicaView<'_>,
    now: SimTime,
    params: &FailoverParams,
    max_attempts: u32,
) -> Result<UpdateOutcome<F>, UpdateError>
where
    F: Scalar,
    S: DocumentStore,
{
    let mut nak = None;
    let mut conflicts = 0;
    for attempt in 1..=max_attempts {
        let p1a = PaxosMessage::Phase1a(leader.start_phase1(nak.take().as_ref()));
        let mut accept = None;
        for (i, store) in acceptors.stores.iter().enumerate() {
            let id = AcceptorId(i as u32);
            let reply = match persist_acceptor_message(store, &acceptor_key(acceptors.register, id), id, &p1a) {
                Ok(r) => r,
                Err(PersistError::Unavailable) => continue,
                Err(e) => return Err(e.into()),
            };
            match reply {
                PaxosMessage::Phase1b(p) => {
                    let out = leader.on_phase1b(&p, |cur| {
                        let base = cur.map_or(bootstrap, |v| &v.payload);
                        Some(transition(base, edit, now, params))
                    });
                    if let Phase1bOutcome::Accept(p2a) = out {
                        accept = Some(p2a);
                        break;
                    }
                }
                PaxosMessage::Nak(n)
                    if leader.on_nak(&n) == NakOutcome::Restart => {
                        nak = Some(n);
                        break;
                    }
                _ => {}
            }
        }
        let Some(p2a) = accept else {
            if nak.is_some() {
                conflicts += 1;
                continue;
            }
            leader.abandon();
            return Err(UpdateError::NoQuorum { attempts: attempt });
        };

        let p2a = PaxosMessage::Phase2a(p2a);
        let mut chosen = None;
        for (i, store) in acceptors.stores.iter().enumerate() {
            let id = AcceptorId(i as u32);
            let reply = match persist_acceptor_message(store, &acceptor_key(acceptors.register, id), id, &p2a) {
                Ok(r) => r,
                Err(PersistError::Unavailable) => continue,
                Err(e) => return Err(e.into()),
            };
            match reply {
                PaxosMessage::Phase2b(p) => {
                    if let Phase2bOutcome::Chosen(v) = leader.on_phase2b(&p) {
                        chosen = Some(v);
                        break;
                    }
                }
                PaxosMessage::Nak(n)
                    if leader.on_nak(&n) == NakOutcome::Restart => {
                        nak = Some(n);
                        break;
                    }
                _ => {}
            }
        }
        match chosen {
            Some(value) => {
                let actions = derive_actions(&value.payload, my_region, view);
                return Ok(UpdateOutcome {
                    value,
                    actions,
                    attempts: attempt,
                    conflicts,
                });
            }
            None if nak.is_some() => conflicts += 1,
            None => {
                leader.abandon();
                return Err(UpdateError::NoQuorum { attempts: attempt });
            }
        }
    }
    Err(UpdateError::Exhausted(max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caspaxos::{ProposerId, QuorumSpec};
    use crate::failover::{LocalRole, PartitionReport};
    use crate::scheduler::SchedulerStats;
    use crate::store::MemoryStore;

    fn report(region: u16, at: u64) -> PartitionReport {
        PartitionReport {
            region: RegionId(region),
            healthy: true,
            committed_lsn: 0,
            epoch_seen: 1,
            report_time: SimTime::from_secs(at),
            writes_quiesced: false,
        }
    }

    const VIEW: ReplicaView<'static> = ReplicaView {
        role: LocalRole::Unassigned,
        local_max_lsn: 0,
        local_last_epoch: None,
        authoritative_progress: None,
    };

    #[test]
    fn sequential_updates_bump_version_by_one() {
        let stores: Vec<MemoryStore> = (0..3).map(|_| MemoryStore::new()).collect();
        let set = AcceptorSet {
            register: "ps0",
            stores: &stores,
        };
        let boot = FailoverManagerState::<f64>::bootstrap(
            (0..3).map(RegionId).collect(),
            1,
            SchedulerStats::default(),
        );
        let p = FailoverParams::default();
        let mut l0 = LeaderStateMachine::new(ProposerId(0), QuorumSpec::majority(3));
        let mut l1 = LeaderStateMachine::new(ProposerId(1), QuorumSpec::majority(3));
        let a = run_state_update(&mut l0, &set, &boot, &StateEdit::report_only(report(0, 1)), RegionId(0), &VIEW, SimTime::from_secs(1), &p, 8).unwrap();
        assert_eq!(a.value.cas_version, 1);
        assert_eq!(a.actions, vec![ReplicaAction::BecomeWritePrimary { epoch: 1 }]);
        let b = run_state_update(&mut l1, &set, &boot, &StateEdit::report_only(report(1, 2)), RegionId(1), &VIEW, SimTime::from_secs(2), &p, 8).unwrap();
        assert_eq!(b.value.cas_version, 2);
        assert_eq!(b.value.payload.latest_reports.len(), 2);
        assert_eq!(b.conflicts, 0);
    }

    #[test]
    fn minority_outage_tolerated_majority_outage_fails() {
        let stores: Vec<MemoryStore> = (0..3).map(|_| MemoryStore::new()).collect();
        let set = AcceptorSet {
            register: "ps0",
            stores: &stores,
        };
        let boot = FailoverManagerState::<f64>::bootstrap(vec![RegionId(0)], 1, SchedulerStats::default());
        let p = FailoverParams::default();
        let mut l = LeaderStateMachine::new(ProposerId(0), QuorumSpec::majority(3));
        stores[0].set_available(false);
        let e = StateEdit::report_only(report(0, 1));
        assert!(run_state_update(&mut l, &set, &boot, &e, RegionId(0), &VIEW, SimTime::from_secs(1), &p, 4).is_ok());
        stores[1].set_available(false);
        assert_eq!(
            run_state_update(&mut l, &set, &boot, &e, RegionId(0), &VIEW, SimTime::from_secs(1), &p, 4).unwrap_err(),
            UpdateError::NoQuorum { attempts: 1 }
        );
    }
}
