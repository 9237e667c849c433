//! Acceptor stores as simulated servers: each applies one message at a
//! time through the durable acceptor path.

use crate::caspaxos::{AcceptorId, PaxosMessage};
use crate::store::{acceptor_key, persist_acceptor_message, MemoryStore, PersistError};
use crate::time::SimTime;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::time::Duration;

pub struct AcceptorStores {
    stores: Vec<MemoryStore>,
    busy_until: Vec<SimTime>,
    service: Duration,
}

impl AcceptorStores {
    pub fn new(count: usize, service: Duration) -> Self {
        AcceptorStores {
            stores: (0..count).map(|_| MemoryStore::new()).collect(),
            busy_until: vec![SimTime::ZERO; count],
            service,
        }
    }

    pub fn len(&self) -> usize {
        self.stores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stores.is_empty()
    }

    pub fn set_available(&self, store: u16, available: bool) {
        self.stores[store as usize].set_available(available);
    }

    /// Applies `msg` for `register` at `store`, arriving at `at`. Returns
    /// the reply and the time it leaves the store, or `None` while the
    /// store is down.
    pub fn handle<P>(
        &mut self,
        register: &str,
        store: u16,
        at: SimTime,
        msg: &PaxosMessage<P>,
    ) -> Result<Option<(PaxosMessage<P>, SimTime)>, PersistError>
    where
        P: Clone + PartialEq + Serialize + DeserializeOwned,
    {
        let i = store as usize;
        let acceptor = AcceptorId(u32::from(store));
        match persist_acceptor_message(&self.stores[i], &acceptor_key(register, acceptor), acceptor, msg) {
            Ok(reply) => {
                let done = self.busy_until[i].max(at) + self.service;
                self.busy_until[i] = done;
                Ok(Some((reply, done)))
            }
            Err(PersistError::Unavailable) => Ok(None),
            Err(e) => Err(e),
        }
    }
}
