use super::*;

#[derive(Clone, Debug)]
pub enum LeaderPhase<P> {
    Idle,
    Preparing {
        ballot: Ballot,
        promises: QuorumChecker,
        highest: Option<Accepted<P>>,
    },
    Accepting {
        ballot: Ballot,
        value: RegisterValue<P>,
        acks: QuorumChecker,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Phase1bOutcome<P> {
    /// Reply for a ballot this leader is no longer preparing.
    Stale,
    /// Still short of a quorum of promises.
    Pending,
    /// Quorum reached; broadcast this to the acceptors.
    Accept(Phase2a<P>),
    /// Quorum reached but the editor made no change and the leader is set
    /// to skip no-op writes. Carries the current value.
    Unchanged(Option<RegisterValue<P>>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Phase2bOutcome<P> {
    Stale,
    Pending,
    Chosen(RegisterValue<P>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NakOutcome {
    /// The rejection does not concern the ballot in flight.
    Stale,
    /// The round is dead; back off and call [`LeaderStateMachine::start_phase1`].
    Restart,
}

/// Proposer side of one register. Drives a single round at a time.
#[derive(Clone, Debug)]
pub struct LeaderStateMachine<P> {
    id: ProposerId,
    quorum: QuorumSpec,
    last_round: u64,
    phase: LeaderPhase<P>,
    skip_unchanged: bool,
}

impl<P: Clone> LeaderStateMachine<P> {
    pub fn new(id: ProposerId, quorum: QuorumSpec) -> Self {
        LeaderStateMachine {
            id,
            quorum,
            last_round: 0,
            phase: LeaderPhase::Idle,
            skip_unchanged: false,
        }
    }

    /// When set, a round whose editor declines to change anything ends after
    /// phase 1 instead of rewriting the current value.
    pub fn with_skip_unchanged(mut self, skip: bool) -> Self {
        self.skip_unchanged = skip;
        self
    }

    pub fn id(&self) -> ProposerId {
        self.id
    }

    pub fn phase(&self) -> &LeaderPhase<P> {
        &self.phase
    }

    pub fn current_ballot(&self) -> Option<Ballot> {
        match &self.phase {
            LeaderPhase::Idle => None,
            LeaderPhase::Preparing { ballot, .. } | LeaderPhase::Accepting { ballot, .. } => {
                Some(*ballot)
            }
        }
    }

    /// Opens a new round with a ballot above everything seen so far,
    /// including the promise carried by `nak`.
    pub fn start_phase1(&mut self, nak: Option<&Nak>) -> Phase1a {
        self.start_phase1_above(nak, 0)
    }

    /// Like [`start_phase1`](Self::start_phase1) with the round also above
    /// `floor`. Proposers pass a clock reading so a fresh round outranks
    /// rounds started earlier without first being rejected for a stale
    /// ballot.
    pub fn start_phase1_above(&mut self, nak: Option<&Nak>, floor: u64) -> Phase1a {
        let seen = nak.map_or(0, |n| n.promised.round);
        self.last_round = self.last_round.max(seen).max(floor) + 1;
        let ballot = Ballot::new(self.last_round, self.id);
        self.phase = LeaderPhase::Preparing {
            ballot,
            promises: self.quorum.checker(),
            highest: None,
        };
        Phase1a { ballot }
    }

    /// Folds in a promise. Once a quorum has promised, `editor` is called
    /// with the newest accepted value; returning `None` means no change.
    pub fn on_phase1b<E>(&mut self, msg: &Phase1b<P>, editor: E) -> Phase1bOutcome<P>
    where
        E: FnOnce(Option<&RegisterValue<P>>) -> Option<P>,
    {
        let LeaderPhase::Preparing {
            ballot,
            promises,
            highest,
        } = &mut self.phase
        else {
            return Phase1bOutcome::Stale;
        };
        if msg.ballot != *ballot {
            return Phase1bOutcome::Stale;
        }
        if !promises.record(msg.acceptor) {
            return Phase1bOutcome::Pending;
        }
        if let Some(acc) = &msg.accepted {
            if highest.as_ref().is_none_or(|h| acc.ballot > h.ballot) {
                *highest = Some(acc.clone());
            }
        }
        if !promises.is_reached() {
            return Phase1bOutcome::Pending;
        }
        let ballot = *ballot;
        let current = highest.take().map(|a| a.value);
        let payload = match editor(current.as_ref()) {
            Some(p) => p,
            None if self.skip_unchanged => {
                self.phase = LeaderPhase::Idle;
                return Phase1bOutcome::Unchanged(current);
            }
            None => match &current {
                Some(v) => v.payload.clone(),
                None => {
                    self.phase = LeaderPhase::Idle;
                    return Phase1bOutcome::Unchanged(None);
                }
            },
        };
        let value = RegisterValue {
            payload,
            cas_version: current.as_ref().map_or(0, |v| v.cas_version) + 1,
        };
        self.phase = LeaderPhase::Accepting {
            ballot,
            value: value.clone(),
            acks: self.quorum.checker(),
        };
        Phase1bOutcome::Accept(Phase2a { ballot, value })
    }

    pub fn on_phase2b(&mut self, msg: &Phase2b<P>) -> Phase2bOutcome<P> {
        let LeaderPhase::Accepting {
            ballot,
            value,
            acks,
        } = &mut self.phase
        else {
            return Phase2bOutcome::Stale;
        };
        if msg.ballot != *ballot {
            return Phase2bOutcome::Stale;
        }
        acks.record(msg.acceptor);
        if !acks.is_reached() {
            return Phase2bOutcome::Pending;
        }
        let chosen = value.clone();
        self.phase = LeaderPhase::Idle;
        Phase2bOutcome::Chosen(chosen)
    }

    pub fn on_nak(&mut self, nak: &Nak) -> NakOutcome {
        self.last_round = self.last_round.max(nak.promised.round);
        match self.current_ballot() {
            // A duplicate prepare can be answered with a rejection naming
            // our own ballot as the promise; that is not a conflict.
            Some(b) if nak.rejected == b && nak.promised > b => {
                self.phase = LeaderPhase::Idle;
                NakOutcome::Restart
            }
            _ => NakOutcome::Stale,
        }
    }

    /// Abandons the round in flight, e.g. on timeout.
    pub fn abandon(&mut self) {
        self.phase = LeaderPhase::Idle;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn promise(ballot: Ballot, acc: u32, accepted: Option<Accepted<u32>>) -> Phase1b<u32> {
        Phase1b {
            ballot,
            acceptor: AcceptorId(acc),
            accepted,
        }
    }

    #[test]
    fn ballots_increase_past_nak() {
        let mut l = LeaderStateMachine::<u32>::new(ProposerId(3), QuorumSpec::majority(3));
        let first = l.start_phase1(None).ballot;
        assert_eq!(first, Ballot::new(1, ProposerId(3)));
        let nak = Nak {
            acceptor: AcceptorId(0),
            rejected: first,
            promised: Ballot::new(7, ProposerId(1)),
        };
        assert_eq!(l.on_nak(&nak), NakOutcome::Restart);
        let next = l.start_phase1(Some(&nak)).ballot;
        assert!(next > nak.promised);
        assert_eq!(next.round, 8);
    }

    #[test]
    fn adopts_highest_accepted_value() {
        let mut l = LeaderStateMachine::<u32>::new(ProposerId(1), QuorumSpec::majority(3));
        let b = l.start_phase1(None).ballot;
        let old = Accepted {
            ballot: Ballot::new(0, ProposerId(5)),
            value: RegisterValue {
                payload: 10,
                cas_version: 4,
            },
        };
        let newer = Accepted {
            ballot: Ballot::new(0, ProposerId(9)),
            value: RegisterValue {
                payload: 11,
                cas_version: 5,
            },
        };
        assert_eq!(
            l.on_phase1b(&promise(b, 0, Some(old)), |_| unreachable!()),
            Phase1bOutcome::Pending
        );
        let out = l.on_phase1b(&promise(b, 1, Some(newer)), |cur| {
            assert_eq!(cur.unwrap().payload, 11);
            Some(cur.unwrap().payload + 1)
        });
        assert_eq!(
            out,
            Phase1bOutcome::Accept(Phase2a {
                ballot: b,
                value: RegisterValue {
                    payload: 12,
                    cas_version: 6
                }
            })
        );
    }

    #[test]
    fn duplicate_promises_do_not_reach_quorum() {
        let mut l = LeaderStateMachine::<u32>::new(ProposerId(1), QuorumSpec::majority(3));
        let b = l.start_phase1(None).ballot;
        assert_eq!(l.on_phase1b(&promise(b, 0, None), |_| Some(1)), Phase1bOutcome::Pending);
        assert_eq!(l.on_phase1b(&promise(b, 0, None), |_| Some(1)), Phase1bOutcome::Pending);
    }

    #[test]
    fn chosen_after_majority_of_accepts() {
        let mut l = LeaderStateMachine::<u32>::new(ProposerId(1), QuorumSpec::majority(3));
        let b = l.start_phase1(None).ballot;
        l.on_phase1b(&promise(b, 0, None), |_| Some(1));
        let Phase1bOutcome::Accept(p2a) = l.on_phase1b(&promise(b, 2, None), |_| Some(1)) else {
            panic!()
        };
        assert_eq!(p2a.value.cas_version, 1);
        let ack = |a| Phase2b {
            ballot: b,
            acceptor: AcceptorId(a),
            value: p2a.value.clone(),
        };
        assert_eq!(l.on_phase2b(&ack(0)), Phase2bOutcome::Pending);
        assert_eq!(l.on_phase2b(&ack(0)), Phase2bOutcome::Pending);
        assert_eq!(l.on_phase2b(&ack(1)), Phase2bOutcome::Chosen(p2a.value.clone()));
        assert_eq!(l.on_phase2b(&ack(2)), Phase2bOutcome::Stale);
    }

    #[test]
    fn skip_unchanged_ends_after_phase1() {
        let mut l =
            LeaderStateMachine::<u32>::new(ProposerId(1), QuorumSpec::majority(1)).with_skip_unchanged(true);
        let b = l.start_phase1(None).ballot;
        assert_eq!(l.on_phase1b(&promise(b, 0, None), |_| None), Phase1bOutcome::Unchanged(None));
        assert!(l.current_ballot().is_none());
    }

    #[test]
    fn noop_edit_rewrites_current_value_by_default() {
        let mut l = LeaderStateMachine::<u32>::new(ProposerId(1), QuorumSpec::majority(1));
        let b = l.start_phase1(None).ballot;
        let acc = Accepted {
            ballot: Ballot::new(0, ProposerId(0)),
            value: RegisterValue {
                payload: 5,
                cas_version: 2,
            },
        };
        let Phase1bOutcome::Accept(p2a) = l.on_phase1b(&promise(b, 0, Some(acc)), |_| None) else {
            panic!()
        };
        assert_eq!(p2a.value, RegisterValue { payload: 5, cas_version: 3 });
    }

    #[test]
    fn nak_naming_our_own_ballot_is_ignored() {
        let mut l = LeaderStateMachine::<u32>::new(ProposerId(1), QuorumSpec::majority(3));
        let b = l.start_phase1(None).ballot;
        let dup = Nak {
            acceptor: AcceptorId(0),
            rejected: b,
            promised: b,
        };
        assert_eq!(l.on_nak(&dup), NakOutcome::Stale);
        assert_eq!(l.current_ballot(), Some(b));
    }
}
