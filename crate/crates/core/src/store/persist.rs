use super::{DocumentStore, StoreError};
use crate::caspaxos::codec::{self, CodecError};
use crate::caspaxos::{
    AcceptorId, AcceptorState, AcceptorStateMachine, PaxosMessage, Phase1Reply, Phase2Reply,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// Upper bound on read-modify-write retries for one message. Only reached
/// under pathological contention on a single acceptor document.
pub const MAX_CAS_RETRIES: usize = 1_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PersistError {
    /// The store could not be reached; the proposer sees a timeout.
    #[error("acceptor store unavailable")]
    Unavailable,
    #[error("stored acceptor state is unreadable: {0}")]
    Corrupt(#[from] CodecError),
    #[error("store i/o failure: {0}")]
    Io(String),
    #[error("only phase 1a and phase 2a messages are addressed to acceptors, got {0}")]
    NotAcceptorRequest(&'static str),
    #[error("gave up after {0} conflicting writes")]
    Contention(usize),
}

impl From<StoreError> for PersistError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Unavailable => PersistError::Unavailable,
            StoreError::Io(s) => PersistError::Io(s),
            StoreError::VersionMismatch { current } => {
                PersistError::Io(format!("unexpected version mismatch at {current}"))
            }
        }
    }
}

/// Document key of one acceptor of one register.
pub fn acceptor_key(register: &str, acceptor: AcceptorId) -> String {
    format!("{register}/acceptor/{}", acceptor.0)
}

/// Applies `msg` to the acceptor stored under `key` and returns the reply.
///
/// The stored state is read, run through the acceptor state machine and
/// written back conditioned on the version that was read. A concurrent
/// writer causes a retry from the read. Writes are skipped when the state
/// did not change, so rejections and duplicate accepts cost one read.
pub fn persist_acceptor_message<P, S>(
    store: &S,
    key: &str,
    acceptor: AcceptorId,
    msg: &PaxosMessage<P>,
) -> Result<PaxosMessage<P>, PersistError>
where
    P: Clone + PartialEq + Serialize + DeserializeOwned,
    S: DocumentStore + ?Sized,
{
    if !matches!(msg, PaxosMessage::Phase1a(_) | PaxosMessage::Phase2a(_)) {
        return Err(PersistError::NotAcceptorRequest(msg.kind()));
    }
    for _ in 0..MAX_CAS_RETRIES {
        let doc = store.read(key)?;
        let (version, state) = match &doc {
            Some(d) => (d.store_version, codec::decode::<AcceptorState<P>>(&d.body)?),
            None => (0, AcceptorState::default()),
        };
        let mut machine = AcceptorStateMachine::new(acceptor, state.clone());
        let reply = match msg {
            PaxosMessage::Phase1a(m) => match machine.on_phase1a(m) {
                Phase1Reply::Promise(p) => PaxosMessage::Phase1b(p),
                Phase1Reply::Reject(n) => PaxosMessage::Nak(n),
            },
            PaxosMessage::Phase2a(m) => match machine.on_phase2a(m) {
                Phase2Reply::Accepted(p) => PaxosMessage::Phase2b(p),
                Phase2Reply::Reject(n) => PaxosMessage::Nak(n),
            },
            _ => unreachable!("checked above"),
        };
        let next = machine.into_state();
        if matches!(reply, PaxosMessage::Nak(_)) || next == state {
            return Ok(reply);
        }
        match store.compare_and_swap(key, version, codec::encode(&next)) {
            Ok(_) => return Ok(reply),
            Err(StoreError::VersionMismatch { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(PersistError::Contention(MAX_CAS_RETRIES))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caspaxos::{Ballot, Phase1a, Phase2a, ProposerId, RegisterValue};
    use crate::store::{MemoryStore, StoredDocument};
    use std::cell::Cell;

    fn p1a(round: u64) -> PaxosMessage<u32> {
        PaxosMessage::Phase1a(Phase1a {
            ballot: Ballot::new(round, ProposerId(1)),
        })
    }

    fn p2a(round: u64, payload: u32) -> PaxosMessage<u32> {
        PaxosMessage::Phase2a(Phase2a {
            ballot: Ballot::new(round, ProposerId(1)),
            value: RegisterValue {
                payload,
                cas_version: 1,
            },
        })
    }

    #[test]
    fn promise_is_durable() {
        let s = MemoryStore::new();
        let key = acceptor_key("ps0", AcceptorId(2));
        let r = persist_acceptor_message(&s, &key, AcceptorId(2), &p1a(4)).unwrap();
        assert!(matches!(r, PaxosMessage::Phase1b(_)));
        let doc = s.read(&key).unwrap().unwrap();
        let state: AcceptorState<u32> = codec::decode(&doc.body).unwrap();
        assert_eq!(state.promised, Some(Ballot::new(4, ProposerId(1))));
        assert_eq!(doc.store_version, 1);
    }

    #[test]
    fn rejections_and_duplicates_skip_the_write() {
        let s = MemoryStore::new();
        persist_acceptor_message(&s, "k", AcceptorId(0), &p1a(4)).unwrap();
        let r = persist_acceptor_message(&s, "k", AcceptorId(0), &p1a(3)).unwrap();
        assert!(matches!(r, PaxosMessage::Nak(_)));
        assert_eq!(s.read("k").unwrap().unwrap().store_version, 1);
        persist_acceptor_message(&s, "k", AcceptorId(0), &p2a(4, 7)).unwrap();
        persist_acceptor_message(&s, "k", AcceptorId(0), &p2a(4, 7)).unwrap();
        assert_eq!(s.read("k").unwrap().unwrap().store_version, 2);
    }

    #[test]
    fn non_requests_are_refused() {
        let s = MemoryStore::new();
        let nak = PaxosMessage::<u32>::Nak(crate::caspaxos::Nak {
            acceptor: AcceptorId(0),
            rejected: Ballot::default(),
            promised: Ballot::default(),
        });
        assert_eq!(
            persist_acceptor_message(&s, "k", AcceptorId(0), &nak),
            Err(PersistError::NotAcceptorRequest("nak"))
        );
    }

    #[test]
    fn unavailable_store_surfaces_as_timeout() {
        let s = MemoryStore::new();
        s.set_available(false);
        assert_eq!(
            persist_acceptor_message(&s, "k", AcceptorId(0), &p1a(1)),
            Err(PersistError::Unavailable)
        );
    }

    /// Injects a competing higher promise between the first read and write.
    struct Interfering {
        inner: MemoryStore,
        fired: Cell<bool>,
    }

    impl DocumentStore for Interfering {
        fn read(&self, key: &str) -> Result<Option<StoredDocument>, StoreError> {
            self.inner.read(key)
        }

        fn compare_and_swap(&self, key: &str, expected: u64, body: Vec<u8>) -> Result<u64, StoreError> {
            if !self.fired.replace(true) {
                persist_acceptor_message(&self.inner, key, AcceptorId(0), &p1a(9)).unwrap();
            }
            self.inner.compare_and_swap(key, expected, body)
        }
    }

    #[test]
    fn concurrent_write_forces_reevaluation() {
        let s = Interfering {
            inner: MemoryStore::new(),
            fired: Cell::new(false),
        };
        // Without the retry the lower promise would overwrite round 9.
        let r = persist_acceptor_message(&s, "k", AcceptorId(0), &p1a(5)).unwrap();
        match r {
            PaxosMessage::Nak(n) => assert_eq!(n.promised.round, 9),
            other => panic!("expected nak, got {other:?}"),
        }
        let state: AcceptorState<u32> = codec::decode(&s.read("k").unwrap().unwrap().body).unwrap();
        assert_eq!(state.promised.unwrap().round, 9);
    }
}
