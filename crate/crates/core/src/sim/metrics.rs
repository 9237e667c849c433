use serde::{Deserialize, Serialize};

/// One power outage of a region, seen from one partition set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutageMetrics {
    pub region: u16,
    pub start_s: f64,
    pub restore_s: f64,
    /// Whether the region held write status when it lost power.
    pub was_write_region: bool,
    /// Outage start to the failover manager deciding to fail over.
    pub detection_s: Option<f64>,
    /// Failover decision to a new write region accepting writes.
    pub recovery_s: Option<f64>,
    /// Power restore to the failover manager starting a graceful failback
    /// to the region.
    pub failback_detection_s: Option<f64>,
    /// Power restore to the region accepting writes again.
    pub failback_completed_s: Option<f64>,
    /// Whether write status returned to the region through a graceful
    /// failover.
    pub graceful_failback: bool,
    /// Epoch increments from the outage start until the failback completed.
    pub epoch_increments: u64,
    /// Outage start to the first acknowledgement of a client write issued
    /// after the outage started.
    pub writes_resumed_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionSetMetrics {
    pub partition_set: usize,
    pub outages: Vec<OutageMetrics>,
    pub final_epoch: u64,
    pub graceful_failovers: u64,
    pub ungraceful_failovers: u64,
    pub acknowledged_writes: u64,
    pub surviving_writes: u64,
    pub lost_writes: u64,
    /// Entries discarded by false-progress truncation, counted once per
    /// abandoned history.
    pub false_progress_span: u64,
    pub full_reseeds: u64,
    /// Client writes that found no region able to accept them.
    pub unavailable_writes: u64,
    pub reads_checked: u64,
    pub graceful_attempts: Vec<f64>,
}

/// Summary of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub seed: u64,
    pub policy: String,
    pub proposers: usize,
    pub sim_hours: f64,
    pub lease_windows_total: u64,
    pub lease_windows_failed: u64,
    pub failure_rate: f64,
    pub cas_conflicts: u64,
    pub acknowledged_writes: u64,
    pub surviving_writes: u64,
    pub lost_writes: u64,
    pub false_progress_span: u64,
    pub unavailable_writes: u64,
    pub partition_sets: Vec<PartitionSetMetrics>,
}

impl MetricsRecord {
    pub fn finish_rates(&mut self) {
        self.failure_rate = if self.lease_windows_total == 0 {
            0.0
        } else {
            self.lease_windows_failed as f64 / self.lease_windows_total as f64
        };
    }

    pub fn absorb(&mut self, ps: PartitionSetMetrics) {
        self.acknowledged_writes += ps.acknowledged_writes;
        self.surviving_writes += ps.surviving_writes;
        self.lost_writes += ps.lost_writes;
        self.false_progress_span += ps.false_progress_span;
        self.unavailable_writes += ps.unavailable_writes;
        self.partition_sets.push(ps);
    }

    pub fn recovery_times_s(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .partition_sets
            .iter()
            .flat_map(|p| p.outages.iter().filter_map(|o| o.recovery_s))
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn p50_recovery_s(&self) -> Option<f64> {
        median(&self.recovery_times_s())
    }

    pub fn max_recovery_s(&self) -> Option<f64> {
        self.recovery_times_s().last().copied()
    }
}

/// Median of sorted values; mean of the middle pair for even lengths.
pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_rate_is_ratio() {
        let mut m = MetricsRecord {
            lease_windows_total: 400,
            lease_windows_failed: 3,
            ..Default::default()
        };
        m.finish_rates();
        assert_eq!(m.failure_rate, 0.0075);
        let mut empty = MetricsRecord::default();
        empty.finish_rates();
        assert_eq!(empty.failure_rate, 0.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[1.0, 2.0, 9.0]), Some(2.0));
        assert_eq!(median(&[1.0, 2.0, 4.0, 9.0]), Some(3.0));
    }
}
