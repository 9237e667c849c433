use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Last log position written in each epoch of the authoritative history.
/// An epoch that started but wrote nothing maps to the position it
/// started after.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressTable {
    last_lsn: BTreeMap<u64, u64>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ProgressError {
    #[error("epoch {epoch} is closed by later epoch {later}")]
    EpochClosed { epoch: u64, later: u64 },
    #[error("lsn {lsn} for epoch {epoch} is below the preceding epoch's {floor}")]
    Regression { epoch: u64, lsn: u64, floor: u64 },
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("epoch {fork_epoch} is unknown to the authoritative history; full reseed required")]
pub struct FullReseedRequired {
    pub fork_epoch: u64,
}

impl ProgressTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Extends `epoch` to `lsn`. Only the newest epoch may grow; earlier
    /// epochs are final.
    pub fn record(&mut self, epoch: u64, lsn: u64) -> Result<(), ProgressError> {
        if let Some((&later, _)) = self.last_lsn.range(epoch + 1..).next() {
            let current = self.last_lsn.get(&epoch).copied();
            if current.is_some_and(|c| c >= lsn) {
                return Ok(());
            }
            return Err(ProgressError::EpochClosed { epoch, later });
        }
        if let Some((_, &floor)) = self.last_lsn.range(..epoch).next_back() {
            if lsn < floor {
                return Err(ProgressError::Regression { epoch, lsn, floor });
            }
        }
        let e = self.last_lsn.entry(epoch).or_insert(lsn);
        *e = (*e).max(lsn);
        Ok(())
    }

    pub fn get(&self, epoch: u64) -> Option<u64> {
        self.last_lsn.get(&epoch).copied()
    }

    pub fn latest(&self) -> Option<(u64, u64)> {
        self.last_lsn.iter().next_back().map(|(&e, &l)| (e, l))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.last_lsn.iter().map(|(&e, &l)| (e, l))
    }

    /// Restricts the table to a history that ends at `lsn`.
    pub fn clamp(&mut self, lsn: u64) {
        for v in self.last_lsn.values_mut() {
            *v = (*v).min(lsn);
        }
    }
}

/// Where a replica whose newest entry was written in `fork_epoch` must cut
/// its log to agree with `authoritative`: entries above the returned
/// position were never part of the surviving history.
pub fn truncate_false_progress(
    authoritative: &ProgressTable,
    local_max_lsn: u64,
    fork_epoch: u64,
) -> Result<u64, FullReseedRequired> {
    authoritative
        .get(fork_epoch)
        .map(|last| last.min(local_max_lsn))
        .ok_or(FullReseedRequired { fork_epoch })
}
