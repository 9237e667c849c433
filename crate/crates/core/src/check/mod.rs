//! Property checks run by `ppaf check` and the acceptance suite.

pub mod agreement;
pub mod enumerate;
pub mod linearizable;
pub mod welford;

use crate::store::{FileStore, MemoryStore};
use std::fmt;
use std::sync::Arc;

/// Outcome of one property.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Summary on success, minimal counterexample on failure.
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

/// Trial counts and fixtures for [`run_all`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckOptions {
    pub agreement_trials: u64,
    pub enumeration_depth: usize,
    pub welford_streams: usize,
    pub store_clients: usize,
    pub store_ops: usize,
    /// Acceptor behaviour in the agreement trials; anything but
    /// `Correct` is a deliberately broken fixture.
    pub acceptor_rule: agreement::AcceptorRule,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            agreement_trials: 10_000,
            enumeration_depth: 4,
            welford_streams: 1000,
            store_clients: 4,
            store_ops: 250,
            acceptor_rule: agreement::AcceptorRule::Correct,
        }
    }
}

fn result(name: &'static str, r: Result<String, String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

fn store_check(clients: usize, ops: usize) -> Result<String, String> {
    let mem = linearizable::record_history(Arc::new(MemoryStore::new()), clients, ops).map_err(|e| e.to_string())?;
    let mem_writes = linearizable::check_history(&mem).map_err(|e| format!("memory store: {e}"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = FileStore::open(dir.path()).map_err(|e| e.to_string())?;
    let file = linearizable::record_history(Arc::new(store), clients, ops.min(100)).map_err(|e| e.to_string())?;
    let file_writes = linearizable::check_history(&file).map_err(|e| format!("file store: {e}"))?;
    Ok(format!("{mem_writes} swaps on the memory store and {file_writes} on the file store linearize"))
}

/// Runs every property and returns one result per property, in order.
pub fn run_all(seed: u64, opts: &CheckOptions) -> Vec<CheckResult> {
    let agreement = agreement::run_trials(opts.agreement_trials, seed, opts.acceptor_rule)
        .map(|s| {
            format!(
                "{} trials, {} operations completed, {} versions chosen",
                s.trials, s.completed_ops, s.chosen_versions
            )
        })
        .map_err(|c| c.to_string());
    let fm = enumerate::enumerate(&enumerate::EnumerationConfig {
        depth: opts.enumeration_depth,
        ..Default::default()
    })
    .map(|s| format!("{} states, {} transitions, max epoch {}", s.states, s.transitions, s.max_epoch))
    .map_err(|f| format!("{}\n  {}", f.problem, f.path.join("\n  ")));
    let welford = welford::check(opts.welford_streams, seed, 1e-9)
        .map(|s| {
            format!(
                "{} streams, max relative error mean {:.1e}, sd {:.1e}",
                s.streams, s.max_rel_err_mean, s.max_rel_err_sd
            )
        });
    vec![
        result("agreement", agreement),
        result("failover-enumeration", fm),
        result("welford", welford),
        result("store-linearizability", store_check(opts.store_clients, opts.store_ops)),
    ]
}
