use super::AcceptorId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Majority quorum over a fixed acceptor count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumSpec {
    pub acceptors: usize,
}

impl QuorumSpec {
    pub fn majority(acceptors: usize) -> Self {
        QuorumSpec { acceptors }
    }

    pub fn threshold(&self) -> usize {
        self.acceptors / 2 + 1
    }

    pub fn checker(&self) -> QuorumChecker {
        QuorumChecker::new(self.threshold())
    }
}

/// Counts distinct responders until the threshold is reached.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumChecker {
    acceptor_ids: BTreeSet<AcceptorId>,
    threshold: usize,
}

impl QuorumChecker {
    pub fn new(threshold: usize) -> Self {
        QuorumChecker {
            acceptor_ids: BTreeSet::new(),
            threshold,
        }
    }

    /// Records a response. Returns false for a duplicate.
    pub fn record(&mut self, id: AcceptorId) -> bool {
        self.acceptor_ids.insert(id)
    }

    pub fn is_reached(&self) -> bool {
        self.acceptor_ids.len() >= self.threshold
    }

    pub fn count(&self) -> usize {
        self.acceptor_ids.len()
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_thresholds() {
        for (n, t) in [(1, 1), (2, 2), (3, 2), (4, 3), (5, 3), (7, 4), (9, 5)] {
            assert_eq!(QuorumSpec::majority(n).threshold(), t, "n = {n}");
        }
    }

    #[test]
    fn duplicates_do_not_count() {
        let mut q = QuorumSpec::majority(3).checker();
        assert!(q.record(AcceptorId(1)));
        assert!(!q.record(AcceptorId(1)));
        assert!(!q.is_reached());
        q.record(AcceptorId(2));
        assert!(q.is_reached());
    }
}
