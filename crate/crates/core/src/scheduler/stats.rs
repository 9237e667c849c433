use super::SchedulerError;
use crate::num::Scalar;
use serde::{Deserialize, Serialize};

/// Exponentially weighted running mean and variance of phase-2 durations
/// in seconds, carried inside the replicated value.
///
/// Sample `n` gets weight `w = max(alpha, 1/n)`, or exactly `1/n` when
/// `alpha == 1`:
///
/// ```text
/// mean'     = mean + w (d - mean)
/// variance' = (1 - w) (variance + w (d - mean)^2)
/// ```
///
/// With `w = 1/n` this is Welford's algorithm for the population variance.
/// For `alpha < 1` early samples are averaged uniformly until `1/n` drops
/// below `alpha`, which keeps the zero initial mean from biasing the EMA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerStats<F = f64> {
    pub count: u64,
    pub ema_mean: F,
    pub variance: F,
    pub alpha: F,
}

impl<F: Scalar> SchedulerStats<F> {
    pub fn new(alpha: F) -> Result<Self, SchedulerError> {
        if !(alpha > F::zero() && alpha <= F::one()) {
            return Err(SchedulerError::InvalidAlpha(alpha.to_f64_lossy()));
        }
        Ok(SchedulerStats {
            count: 0,
            ema_mean: F::zero(),
            variance: F::zero(),
            alpha,
        })
    }

    fn weight(&self, n: u64) -> F {
        let uniform = F::one() / F::from_u64(n).unwrap_or_else(F::max_value);
        if self.alpha >= F::one() {
            uniform
        } else {
            self.alpha.max(uniform)
        }
    }

    pub fn record(&self, sample: F) -> Self {
        let n = self.count + 1;
        let w = self.weight(n);
        let diff = sample - self.ema_mean;
        let variance = ((F::one() - w) * (self.variance + w * diff * diff)).max(F::zero());
        SchedulerStats {
            count: n,
            ema_mean: self.ema_mean + w * diff,
            variance,
            alpha: self.alpha,
        }
    }

    pub fn mean(&self) -> F {
        self.ema_mean
    }

    pub fn std_dev(&self) -> F {
        self.variance.max(F::zero()).sqrt()
    }
}

impl<F: Scalar> Default for SchedulerStats<F> {
    fn default() -> Self {
        Self::new(F::from_f64_lossy(0.1)).expect("default weight is valid")
    }
}
