//! Proposer retry and scheduling policy for contended registers.
//!
//! Two policies are provided. The static one backs off by a fixed base delay
//! scaled by a random exponential factor and schedules the next proposal a
//! jittered interval after the last one. The adaptive one scales the same
//! factor by the observed phase-2 latency and phases proposals so each
//! proposer keeps a regular cadence measured from the start of its update.

mod stats;

pub use stats::SchedulerStats;

use crate::num::Scalar;
use crate::time::SimTime;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

/// Largest exponent applied to the random backoff range.
pub const MAX_BACKOFF_EXPONENT: u32 = 10;

/// Base delay used by the adaptive policy before any sample is recorded.
pub const COLD_START_DELAY: Duration = Duration::from_millis(200);

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("retry attempts are numbered from 1")]
    ZeroAttempt,
    #[error("smoothing weight {0} is outside (0, 1]")]
    InvalidAlpha(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackoffPolicy {
    #[default]
    Static,
    Adaptive,
}

impl BackoffPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            BackoffPolicy::Static => "static",
            BackoffPolicy::Adaptive => "adaptive",
        }
    }
}

/// Upper bound of the random factor for retry number `attempt`: 2^(attempt-1)
/// with the exponent capped at [`MAX_BACKOFF_EXPONENT`].
pub fn backoff_range(attempt: u32) -> Result<f64, SchedulerError> {
    if attempt == 0 {
        return Err(SchedulerError::ZeroAttempt);
    }
    Ok(f64::from(1u32 << (attempt - 1).min(MAX_BACKOFF_EXPONENT)))
}

fn scaled_uniform<R: Rng + ?Sized>(base_s: f64, attempt: u32, rng: &mut R) -> Result<Duration, SchedulerError> {
    let range = backoff_range(attempt)?;
    let u: f64 = rng.random::<f64>() * range;
    let us = (base_s.max(0.0) * u * 1e6).floor();
    Ok(Duration::from_micros(us as u64))
}

/// Retry delay under the static policy: `delta · U(0, 2^(attempt-1))`.
pub fn static_nak_delay<R: Rng + ?Sized>(
    attempt: u32,
    delta: Duration,
    rng: &mut R,
) -> Result<Duration, SchedulerError> {
    scaled_uniform(delta.as_secs_f64(), attempt, rng)
}

/// Retry delay under the adaptive policy: `(mean + std) · U(0, 2^(attempt-1))`
/// over recorded phase-2 durations, falling back to [`COLD_START_DELAY`].
pub fn adaptive_nak_delay<F: Scalar, R: Rng + ?Sized>(
    stats: &SchedulerStats<F>,
    attempt: u32,
    rng: &mut R,
) -> Result<Duration, SchedulerError> {
    let base = if stats.count == 0 {
        COLD_START_DELAY.as_secs_f64()
    } else {
        (stats.mean() + stats.std_dev()).to_f64_lossy()
    };
    scaled_uniform(base, attempt, rng)
}

/// Time between broadcasting phase 2a and reaching a quorum of phase 2b.
pub fn phase2_duration(phase2a_start: SimTime, phase2b_quorum: SimTime) -> Duration {
    phase2b_quorum - phase2a_start
}

/// Folds one phase-2 duration into the statistics.
pub fn record_phase2_duration<F: Scalar>(stats: &SchedulerStats<F>, d: Duration) -> SchedulerStats<F> {
    stats.record(F::from_f64_lossy(d.as_secs_f64()))
}

/// Delay from the end of one proposal to the start of the next so that
/// proposals start every `interval`: `max(0, interval - proposal_duration)`.
pub fn next_proposal_delay(interval: Duration, proposal_duration: Duration) -> Duration {
    interval.saturating_sub(proposal_duration)
}
