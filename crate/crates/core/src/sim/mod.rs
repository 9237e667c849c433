//! Deterministic discrete-event simulation of the failover manager and of
//! dueling lease proposers.

pub mod config;
pub mod dueling;
pub mod metrics;
pub mod network;
pub mod proposer;
pub mod queue;
pub mod rng;
pub mod scenarios;
pub mod stores;
pub mod world;
pub mod trace;

use crate::time::SimTime;
use config::{ScenarioConfig, ScenarioKind};
use metrics::MetricsRecord;
use thiserror::Error;
use trace::TraceRecord;

/// Metrics and, when requested, the full event trace of one run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: MetricsRecord,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Error)]
pub enum SimError {
    /// A safety or liveness check failed. `trace` holds the events leading
    /// up to it.
    #[error("invariant violated at {at}: {what}")]
    Invariant {
        at: SimTime,
        what: String,
        trace: Vec<TraceRecord>,
    },
}

/// Runs one scenario to its horizon.
pub fn run(cfg: &ScenarioConfig, keep_trace: bool) -> Result<RunOutput, SimError> {
    match cfg.scenario {
        ScenarioKind::Failover => world::run(cfg, keep_trace),
        ScenarioKind::Dueling => dueling::run(cfg, keep_trace),
    }
}
