use super::*;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Phase1Reply<P> {
    Promise(Phase1b<P>),
    Reject(Nak),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Phase2Reply<P> {
    Accepted(Phase2b<P>),
    Reject(Nak),
}

/// Pure acceptor logic. Persistence lives in [`crate::store`].
#[derive(Clone, Debug)]
pub struct AcceptorStateMachine<P> {
    id: AcceptorId,
    state: AcceptorState<P>,
}

impl<P: Clone> AcceptorStateMachine<P> {
    pub fn new(id: AcceptorId, state: AcceptorState<P>) -> Self {
        AcceptorStateMachine { id, state }
    }

    pub fn id(&self) -> AcceptorId {
        self.id
    }

    pub fn state(&self) -> &AcceptorState<P> {
        &self.state
    }

    pub fn into_state(self) -> AcceptorState<P> {
        self.state
    }

    pub fn on_phase1a(&mut self, msg: &Phase1a) -> Phase1Reply<P> {
        match self.state.promised {
            Some(p) if msg.ballot <= p => Phase1Reply::Reject(self.nak(msg.ballot, p)),
            _ => {
                self.state.promised = Some(msg.ballot);
                Phase1Reply::Promise(Phase1b {
                    ballot: msg.ballot,
                    acceptor: self.id,
                    accepted: self.state.accepted.clone(),
                })
            }
        }
    }

    pub fn on_phase2a(&mut self, msg: &Phase2a<P>) -> Phase2Reply<P> {
        match self.state.promised {
            Some(p) if msg.ballot < p => Phase2Reply::Reject(self.nak(msg.ballot, p)),
            _ => {
                self.state.promised = Some(msg.ballot);
                self.state.accepted = Some(Accepted {
                    ballot: msg.ballot,
                    value: msg.value.clone(),
                });
                Phase2Reply::Accepted(Phase2b {
                    ballot: msg.ballot,
                    acceptor: self.id,
                    value: msg.value.clone(),
                })
            }
        }
    }

    fn nak(&self, rejected: Ballot, promised: Ballot) -> Nak {
        Nak {
            acceptor: self.id,
            rejected,
            promised,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(round: u64, p: u32) -> Ballot {
        Ballot::new(round, ProposerId(p))
    }

    fn fresh() -> AcceptorStateMachine<u32> {
        AcceptorStateMachine::new(AcceptorId(0), AcceptorState::default())
    }

    #[test]
    fn promise_on_empty_state() {
        let mut a = fresh();
        let reply = a.on_phase1a(&Phase1a { ballot: b(1, 1) });
        assert_eq!(
            reply,
            Phase1Reply::Promise(Phase1b {
                ballot: b(1, 1),
                acceptor: AcceptorId(0),
                accepted: None
            })
        );
        assert_eq!(a.state().promised, Some(b(1, 1)));
    }

    #[test]
    fn lower_or_equal_prepare_is_rejected() {
        let mut a = fresh();
        a.on_phase1a(&Phase1a { ballot: b(5, 2) });
        for lower in [b(3, 1), b(5, 2), b(5, 1)] {
            match a.on_phase1a(&Phase1a { ballot: lower }) {
                Phase1Reply::Reject(n) => {
                    assert_eq!(n.rejected, lower);
                    assert_eq!(n.promised, b(5, 2));
                }
                other => panic!("expected rejection, got {other:?}"),
            }
        }
        assert_eq!(a.state().promised, Some(b(5, 2)));
    }

    #[test]
    fn accept_at_promised_ballot_and_reject_below() {
        let mut a = fresh();
        a.on_phase1a(&Phase1a { ballot: b(2, 1) });
        let value = RegisterValue {
            payload: 7,
            cas_version: 1,
        };
        let low = a.on_phase2a(&Phase2a {
            ballot: b(1, 9),
            value: value.clone(),
        });
        assert!(matches!(low, Phase2Reply::Reject(_)));
        assert!(a.state().accepted.is_none());
        let ok = a.on_phase2a(&Phase2a {
            ballot: b(2, 1),
            value: value.clone(),
        });
        assert!(matches!(ok, Phase2Reply::Accepted(_)));
        let acc = a.state().accepted.clone().unwrap();
        assert_eq!(acc.ballot, b(2, 1));
        assert_eq!(acc.value, value);
    }

    #[test]
    fn phase1b_reports_previously_accepted_value() {
        let mut a = fresh();
        a.on_phase2a(&Phase2a {
            ballot: b(1, 1),
            value: RegisterValue {
                payload: 3,
                cas_version: 1,
            },
        });
        match a.on_phase1a(&Phase1a { ballot: b(2, 2) }) {
            Phase1Reply::Promise(p) => {
                assert_eq!(p.accepted.unwrap().value.payload, 3);
            }
            other => panic!("{other:?}"),
        }
    }
}
