//! Online phase-2 statistics with `alpha = 1` against a two-pass batch
//! computation of the population mean and standard deviation.

use crate::scheduler::SchedulerStats;
use crate::sim::rng::stream;
use rand::Rng;

/// Largest relative error seen across all streams.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WelfordSummary {
    pub streams: usize,
    pub max_rel_err_mean: f64,
    pub max_rel_err_sd: f64,
}

fn batch(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares `streams` random streams of 1 to 500 samples each.
pub fn check(streams: usize, seed: u64, tolerance: f64) -> Result<WelfordSummary, String> {
    let mut summary = WelfordSummary {
        streams,
        ..Default::default()
    };
    for i in 0..streams {
        let mut rng = stream(seed, "welford", i as u64);
        let len = rng.random_range(1..=500);
        let scale = 10f64.powi(rng.random_range(-3..=3));
        let offset = rng.random_range(0.0..10.0) * scale;
        let xs: Vec<f64> = (0..len).map(|_| offset + rng.random::<f64>() * scale).collect();
        let online = xs
            .iter()
            .fold(SchedulerStats::new(1.0).expect("alpha 1 is valid"), |s, &x| s.record(x));
        let (mean, sd) = batch(&xs);
        let em = rel_err(online.mean(), mean);
        // Standard deviations near zero carry the mean's rounding error.
        let es = (online.std_dev() - sd).abs() / sd.max(mean.abs() * 1e-6).max(f64::MIN_POSITIVE);
        summary.max_rel_err_mean = summary.max_rel_err_mean.max(em);
        summary.max_rel_err_sd = summary.max_rel_err_sd.max(es);
        if em > tolerance || es > tolerance {
            return Err(format!(
                "stream {i} ({len} samples): online ({}, {}) vs batch ({mean}, {sd})",
                online.mean(),
                online.std_dev()
            ));
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_batch_statistics() {
        let s = check(200, 3, 1e-9).unwrap();
        assert!(s.max_rel_err_mean < 1e-9 && s.max_rel_err_sd < 1e-9, "{s:?}");
    }
}
