//! Leaderless single-register consensus (CAS Paxos).
//!
//! Every update is a full two-phase round: a proposer reads the latest
//! accepted value from a quorum, applies a change function and writes the
//! result back under the same ballot. There is no log and no stable leader.

mod acceptor;
pub mod codec;
mod leader;
mod learner;
mod quorum;

pub use acceptor::{AcceptorStateMachine, Phase1Reply, Phase2Reply};
pub use leader::{LeaderPhase, LeaderStateMachine, NakOutcome, Phase1bOutcome, Phase2bOutcome};
pub use learner::LearnerStateMachine;
pub use quorum::{QuorumChecker, QuorumSpec};

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ProposerId(pub u32);

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct AcceptorId(pub u32);

/// Totally ordered ballot. Field order gives the lexicographic comparison
/// on (round, proposer).
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Ballot {
    pub round: u64,
    pub proposer: ProposerId,
}

impl Ballot {
    pub fn new(round: u64, proposer: ProposerId) -> Self {
        Ballot { round, proposer }
    }
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.round, self.proposer.0)
    }
}

/// The replicated register contents. `cas_version` counts committed edits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterValue<P> {
    pub payload: P,
    pub cas_version: u64,
}

/// A value together with the ballot it was accepted under.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accepted<P> {
    pub ballot: Ballot,
    pub value: RegisterValue<P>,
}

/// Durable acceptor record. `accepted`, when present, never carries a
/// ballot above `promised`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptorState<P> {
    pub promised: Option<Ballot>,
    pub accepted: Option<Accepted<P>>,
}

impl<P> Default for AcceptorState<P> {
    fn default() -> Self {
        AcceptorState {
            promised: None,
            accepted: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase1a {
    pub ballot: Ballot,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase1b<P> {
    pub ballot: Ballot,
    pub acceptor: AcceptorId,
    pub accepted: Option<Accepted<P>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase2a<P> {
    pub ballot: Ballot,
    pub value: RegisterValue<P>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase2b<P> {
    pub ballot: Ballot,
    pub acceptor: AcceptorId,
    pub value: RegisterValue<P>,
}

/// Rejection carrying the ballot the acceptor has already promised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nak {
    pub acceptor: AcceptorId,
    pub rejected: Ballot,
    pub promised: Ballot,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaxosMessage<P> {
    Phase1a(Phase1a),
    Phase1b(Phase1b<P>),
    Phase2a(Phase2a<P>),
    Phase2b(Phase2b<P>),
    Nak(Nak),
}

impl<P> PaxosMessage<P> {
    pub fn ballot(&self) -> Ballot {
        match self {
            PaxosMessage::Phase1a(m) => m.ballot,
            PaxosMessage::Phase1b(m) => m.ballot,
            PaxosMessage::Phase2a(m) => m.ballot,
            PaxosMessage::Phase2b(m) => m.ballot,
            PaxosMessage::Nak(m) => m.rejected,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PaxosMessage::Phase1a(_) => "phase1a",
            PaxosMessage::Phase1b(_) => "phase1b",
            PaxosMessage::Phase2a(_) => "phase2a",
            PaxosMessage::Phase2b(_) => "phase2b",
            PaxosMessage::Nak(_) => "nak",
        }
    }
}
