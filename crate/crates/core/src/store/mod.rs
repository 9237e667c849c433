//! Versioned document stores that back acceptor state, and the loop that
//! applies an acceptor message to a stored acceptor with optimistic
//! concurrency.

mod file;
mod memory;
mod persist;

pub use file::FileStore;
pub use memory::MemoryStore;
pub use persist::{acceptor_key, persist_acceptor_message, PersistError, MAX_CAS_RETRIES};

use thiserror::Error;

/// A document and the store version of its last write. Versions start at 1
/// and grow by one per successful write.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredDocument {
    pub key: String,
    pub body: Vec<u8>,
    pub store_version: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("store unavailable")]
    Unavailable,
    #[error("version mismatch: document is at version {current}")]
    VersionMismatch { current: u64 },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Key/value store with per-document compare-and-swap.
pub trait DocumentStore {
    fn read(&self, key: &str) -> Result<Option<StoredDocument>, StoreError>;

    /// Writes `body` if the document is currently at `expected`, where 0
    /// means absent. Returns the new version.
    fn compare_and_swap(&self, key: &str, expected: u64, body: Vec<u8>) -> Result<u64, StoreError>;
}

impl<S: DocumentStore + ?Sized> DocumentStore for &S {
    fn read(&self, key: &str) -> Result<Option<StoredDocument>, StoreError> {
        (**self).read(key)
    }

    fn compare_and_swap(&self, key: &str, expected: u64, body: Vec<u8>) -> Result<u64, StoreError> {
        (**self).compare_and_swap(key, expected, body)
    }
}

impl<S: DocumentStore + ?Sized> DocumentStore for std::sync::Arc<S> {
    fn read(&self, key: &str) -> Result<Option<StoredDocument>, StoreError> {
        (**self).read(key)
    }

    fn compare_and_swap(&self, key: &str, expected: u64, body: Vec<u8>) -> Result<u64, StoreError> {
        (**self).compare_and_swap(key, expected, body)
    }
}
