use super::{DocumentStore, StoreError, StoredDocument};
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

/// In-process store. Availability can be toggled to emulate an outage.
#[derive(Debug, Default)]
pub struct MemoryStore {
    docs: Mutex<HashMap<String, (u64, Vec<u8>)>>,
    down: AtomicBool,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_available(&self, available: bool) {
        self.down.store(!available, Ordering::SeqCst);
    }

    pub fn is_available(&self) -> bool {
        !self.down.load(Ordering::SeqCst)
    }

    fn check(&self) -> Result<(), StoreError> {
        if self.is_available() {
            Ok(())
        } else {
            Err(StoreError::Unavailable)
        }
    }
}

impl DocumentStore for MemoryStore {
    fn read(&self, key: &str) -> Result<Option<StoredDocument>, StoreError> {
        self.check()?;
        let docs = self.docs.lock().expect("store lock poisoned");
        Ok(docs.get(key).map(|(v, body)| StoredDocument {
            key: key.to_owned(),
            body: body.clone(),
            store_version: *v,
        }))
    }

    fn compare_and_swap(&self, key: &str, expected: u64, body: Vec<u8>) -> Result<u64, StoreError> {
        self.check()?;
        let mut docs = self.docs.lock().expect("store lock poisoned");
        let current = docs.get(key).map_or(0, |(v, _)| *v);
        if current != expected {
            return Err(StoreError::VersionMismatch { current });
        }
        let next = current + 1;
        docs.insert(key.to_owned(), (next, body));
        Ok(next)
    }
}
