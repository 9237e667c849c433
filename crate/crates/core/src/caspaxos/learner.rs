use super::*;
use std::collections::BTreeMap;

/// Passive observer that reports a value once a quorum of distinct
/// acceptors has accepted it under one ballot.
#[derive(Clone, Debug)]
pub struct LearnerStateMachine<P> {
    quorum: QuorumSpec,
    votes: BTreeMap<Ballot, (RegisterValue<P>, QuorumChecker, bool)>,
    learned: Option<RegisterValue<P>>,
}

impl<P: Clone + PartialEq> LearnerStateMachine<P> {
    pub fn new(quorum: QuorumSpec) -> Self {
        LearnerStateMachine {
            quorum,
            votes: BTreeMap::new(),
            learned: None,
        }
    }

    /// Returns the value at the moment its ballot first reaches a quorum.
    pub fn learn(&mut self, msg: &Phase2b<P>) -> Option<RegisterValue<P>> {
        let quorum = self.quorum;
        let entry = self
            .votes
            .entry(msg.ballot)
            .or_insert_with(|| (msg.value.clone(), quorum.checker(), false));
        if entry.0 != msg.value {
            // One ballot carries one value; anything else is a corrupted
            // message and must not count towards the quorum.
            return None;
        }
        entry.1.record(msg.acceptor);
        if entry.2 || !entry.1.is_reached() {
            return None;
        }
        entry.2 = true;
        let value = entry.0.clone();
        if self
            .learned
            .as_ref()
            .is_none_or(|l| value.cas_version >= l.cas_version)
        {
            self.learned = Some(value.clone());
        }
        // Older ballots can no longer produce anything new for this learner.
        let keep = self.votes.split_off(&msg.ballot);
        self.votes = keep;
        Some(value)
    }

    /// Highest-version value learned so far.
    pub fn latest(&self) -> Option<&RegisterValue<P>> {
        self.learned.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(round: u64, acc: u32, payload: u32, v: u64) -> Phase2b<u32> {
        Phase2b {
            ballot: Ballot::new(round, ProposerId(1)),
            acceptor: AcceptorId(acc),
            value: RegisterValue {
                payload,
                cas_version: v,
            },
        }
    }

    #[test]
    fn learns_exactly_once_per_ballot() {
        let mut l = LearnerStateMachine::new(QuorumSpec::majority(3));
        assert_eq!(l.learn(&vote(1, 0, 9, 1)), None);
        assert_eq!(l.learn(&vote(1, 0, 9, 1)), None);
        assert_eq!(l.learn(&vote(1, 1, 9, 1)).unwrap().payload, 9);
        assert_eq!(l.learn(&vote(1, 2, 9, 1)), None);
        assert_eq!(l.latest().unwrap().cas_version, 1);
    }

    #[test]
    fn mismatched_value_under_same_ballot_is_ignored() {
        let mut l = LearnerStateMachine::new(QuorumSpec::majority(3));
        l.learn(&vote(1, 0, 9, 1));
        assert_eq!(l.learn(&vote(1, 1, 8, 1)), None);
        assert!(l.latest().is_none());
    }
}
