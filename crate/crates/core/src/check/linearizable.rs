//! Concurrent clients against one document of a [`DocumentStore`], checked
//! against a sequential versioned register.

use crate::store::{DocumentStore, StoreError};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Read { version: u64 },
    CasOk { expected: u64, version: u64 },
    CasConflict { expected: u64, current: u64 },
}

/// One completed operation with logical invoke and response instants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Op {
    pub client: usize,
    pub invoked: u64,
    pub returned: u64,
    pub kind: OpKind,
}

/// Runs `clients` threads doing read-then-swap loops on one key and
/// returns the recorded history.
pub fn record_history<S>(store: Arc<S>, clients: usize, ops_per_client: usize) -> Result<Vec<Op>, StoreError>
where
    S: DocumentStore + Send + Sync + 'static,
{
    let clock = Arc::new(AtomicU64::new(0));
    let handles: Vec<_> = (0..clients)
        .map(|client| {
            let store = Arc::clone(&store);
            let clock = Arc::clone(&clock);
            std::thread::spawn(move || -> Result<Vec<Op>, StoreError> {
                let tick = || clock.fetch_add(1, Ordering::SeqCst);
                let mut out = Vec::with_capacity(ops_per_client * 2);
                for i in 0..ops_per_client {
                    let invoked = tick();
                    let version = store.read("register")?.map_or(0, |d| d.store_version);
                    out.push(Op {
                        client,
                        invoked,
                        returned: tick(),
                        kind: OpKind::Read { version },
                    });
                    let invoked = tick();
                    let body = format!("{client}:{i}").into_bytes();
                    let kind = match store.compare_and_swap("register", version, body) {
                        Ok(v) => OpKind::CasOk {
                            expected: version,
                            version: v,
                        },
                        Err(StoreError::VersionMismatch { current }) => OpKind::CasConflict {
                            expected: version,
                            current,
                        },
                        Err(e) => return Err(e),
                    };
                    out.push(Op {
                        client,
                        invoked,
                        returned: tick(),
                        kind,
                    });
                }
                Ok(out)
            })
        })
        .collect();
    let mut history = Vec::new();
    for h in handles {
        history.extend(h.join().expect("client thread panicked")?);
    }
    history.sort_by_key(|o| o.invoked);
    Ok(history)
}

/// Checks a history against a register whose version grows by one per
/// successful swap. Returns a description of the first anomaly.
pub fn check_history(history: &[Op]) -> Result<u64, String> {
    let mut writes: Vec<&Op> = history.iter().filter(|o| matches!(o.kind, OpKind::CasOk { .. })).collect();
    writes.sort_by_key(|o| match o.kind {
        OpKind::CasOk { version, .. } => version,
        _ => unreachable!(),
    });
    for (i, w) in writes.iter().enumerate() {
        let OpKind::CasOk { expected, version } = w.kind else { unreachable!() };
        if version != i as u64 + 1 || expected + 1 != version {
            return Err(format!("successful swaps do not form one chain at {w:?}"));
        }
    }
    let write_of = |v: u64| (v > 0).then(|| writes[v as usize - 1]);
    for (i, a) in writes.iter().enumerate() {
        if let Some(b) = writes[..i].iter().find(|b| a.returned < b.invoked) {
            return Err(format!("{a:?} finished before {b:?} started but is ordered after it"));
        }
    }
    let n = writes.len() as u64;
    for o in history {
        let observed = match o.kind {
            OpKind::Read { version } => version,
            OpKind::CasConflict { expected, current } => {
                if expected == current {
                    return Err(format!("{o:?} was rejected although the version matched"));
                }
                current
            }
            OpKind::CasOk { .. } => continue,
        };
        if observed > n {
            return Err(format!("{o:?} observed a version that was never written"));
        }
        if let Some(w) = write_of(observed) {
            if w.invoked > o.returned {
                return Err(format!("{o:?} observed {w:?} before it was issued"));
            }
        }
        if let Some(next) = write_of(observed + 1) {
            if next.returned < o.invoked {
                return Err(format!("{o:?} is stale: {next:?} had already completed"));
            }
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::MemoryStore;

    #[test]
    fn memory_store_is_linearizable() {
        let h = record_history(Arc::new(MemoryStore::new()), 4, 200).unwrap();
        let writes = check_history(&h).unwrap();
        assert!(writes > 0);
    }

    #[test]
    fn stale_read_is_flagged() {
        let w = |v, i, r| Op {
            client: 0,
            invoked: i,
            returned: r,
            kind: OpKind::CasOk {
                expected: v - 1,
                version: v,
            },
        };
        let history = vec![
            w(1, 0, 1),
            w(2, 2, 3),
            Op {
                client: 1,
                invoked: 4,
                returned: 5,
                kind: OpKind::Read { version: 1 },
            },
        ];
        assert!(check_history(&history).unwrap_err().contains("stale"));
    }
}
