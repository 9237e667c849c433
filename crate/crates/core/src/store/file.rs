use super::{DocumentStore, StoreError, StoredDocument};
use std::fmt::Write as _;
use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// One file per key under a root directory. Each file is the store version
/// as 8 little-endian bytes followed by the body. Writes go to a temporary
/// file that is then renamed over the target.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    // Serializes read-check-rename within this process. Cross-process use
    // is not supported.
    lock: Mutex<()>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io)?;
        Ok(FileStore {
            root,
            lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &str) -> PathBuf {
        let mut name = String::with_capacity(key.len() * 2 + 4);
        for b in key.bytes() {
            let _ = write!(name, "{b:02x}");
        }
        name.push_str(".doc");
        self.root.join(name)
    }

    fn load(&self, key: &str) -> Result<Option<(u64, Vec<u8>)>, StoreError> {
        let bytes = match fs::read(self.path_for(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io(e)),
        };
        if bytes.len() < 8 {
            return Err(StoreError::Io(format!("truncated document for key {key:?}")));
        }
        let (head, body) = bytes.split_at(8);
        let version = u64::from_le_bytes(head.try_into().expect("8-byte slice"));
        Ok(Some((version, body.to_vec())))
    }
}

fn io(e: std::io::Error) -> StoreError {
    StoreError::Io(e.to_string())
}

impl DocumentStore for FileStore {
    fn read(&self, key: &str) -> Result<Option<StoredDocument>, StoreError> {
        let _g = self.lock.lock().expect("store lock poisoned");
        Ok(self.load(key)?.map(|(v, body)| StoredDocument {
            key: key.to_owned(),
            body,
            store_version: v,
        }))
    }

    fn compare_and_swap(&self, key: &str, expected: u64, body: Vec<u8>) -> Result<u64, StoreError> {
        let _g = self.lock.lock().expect("store lock poisoned");
        let current = self.load(key)?.map_or(0, |(v, _)| v);
        if current != expected {
            return Err(StoreError::VersionMismatch { current });
        }
        let next = current + 1;
        let target = self.path_for(key);
        let tmp = target.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(&next.to_le_bytes()).map_err(io)?;
            f.write_all(&body).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, &target).map_err(io)?;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cas_semantics() {
        let dir = tempfile::tempdir().unwrap();
        super::super::conformance::check_cas_semantics(&FileStore::open(dir.path()).unwrap());
    }

    #[test]
    fn survives_reopen_and_keeps_version_prefix() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = FileStore::open(dir.path()).unwrap();
            s.compare_and_swap("ps/1:a", 0, b"one".to_vec()).unwrap();
            s.compare_and_swap("ps/1:a", 1, b"two".to_vec()).unwrap();
        }
        let s = FileStore::open(dir.path()).unwrap();
        let doc = s.read("ps/1:a").unwrap().unwrap();
        assert_eq!(doc.store_version, 2);
        assert_eq!(doc.body, b"two");
        let raw = fs::read(s.path_for("ps/1:a")).unwrap();
        assert_eq!(&raw[..8], &2u64.to_le_bytes());
    }
}
