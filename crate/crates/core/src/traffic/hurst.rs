//! Variance-time estimation of the Hurst parameter.
//!
//! The packet-count series is aggregated at increasing block sizes; for a
//! long-range-dependent process the variance of the block means decays as
//! m^(2H-2), so an ordinary least-squares fit of log variance against log m
//! gives H = 1 + slope/2. Short-range-dependent input decays as 1/m and
//! lands at H = 0.5.

use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum HurstError {
    #[error("need at least {min} bins, got {got}")]
    TooFewBins { got: usize, min: usize },
    #[error("aggregation levels must span at least two decades (max/min >= 100)")]
    SpanTooNarrow,
    #[error("largest aggregation level {level} leaves fewer than {min} blocks")]
    LevelTooCoarse { level: usize, min: usize },
    #[error("series is degenerate (zero variance at aggregation level {level})")]
    Degenerate { level: usize },
    #[error("series looks nonstationary (variance does not decay, H estimate {h:.3})")]
    Nonstationary { h: f64 },
}

const MIN_BINS: usize = 10_000;
const MIN_BLOCKS: usize = 8;

/// Bins arrival instants into fixed-width packet counts covering
/// `[0, horizon)`; the bin of an arrival is `floor(t / bin)`.
pub fn bin_counts(arrivals: &[SimTime], bin: SimTime, horizon: SimTime) -> Vec<f64> {
    assert!(bin > SimTime::ZERO);
    let n_bins = horizon.as_nanos().div_ceil(bin.as_nanos()) as usize;
    let mut counts = vec![0.0; n_bins];
    for &t in arrivals {
        if t < horizon {
            counts[t.div_nanos(bin.as_nanos()) as usize] += 1.0;
        }
    }
    counts
}

/// Variance-time Hurst estimate over the given aggregation levels.
pub fn variance_time_hurst(counts: &[f64], levels: &[usize]) -> Result<f64, HurstError> {
    if counts.len() < MIN_BINS {
        return Err(HurstError::TooFewBins {
            got: counts.len(),
            min: MIN_BINS,
        });
    }
    let min_level = levels.iter().copied().min().unwrap_or(0).max(1);
    let max_level = levels.iter().copied().max().unwrap_or(0);
    if max_level < min_level * 100 {
        return Err(HurstError::SpanTooNarrow);
    }
    if counts.len() / max_level < MIN_BLOCKS {
        return Err(HurstError::LevelTooCoarse {
            level: max_level,
            min: MIN_BLOCKS,
        });
    }

    let mut log_m = Vec::with_capacity(levels.len());
    let mut log_var = Vec::with_capacity(levels.len());
    for &m in levels {
        let var = aggregated_variance(counts, m);
        if var <= 0.0 {
            return Err(HurstError::Degenerate { level: m });
        }
        log_m.push((m as f64).ln());
        log_var.push(var.ln());
    }

    let slope = ols_slope(&log_m, &log_var);
    let h = 1.0 + slope / 2.0;
    if h >= 0.98 {
        return Err(HurstError::Nonstationary { h });
    }
    Ok(h)
}

/// Sample variance of the means of consecutive blocks of `m` bins
/// (trailing partial block discarded).
fn aggregated_variance(counts: &[f64], m: usize) -> f64 {
    let n_blocks = counts.len() / m;
    debug_assert!(n_blocks >= 2);
    let mut means = Vec::with_capacity(n_blocks);
    for block in 0..n_blocks {
        let slice = &counts[block * m..(block + 1) * m];
        means.push(slice.iter().sum::<f64>() / m as f64);
    }
    let grand = means.iter().sum::<f64>() / n_blocks as f64;
    means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (n_blocks as f64 - 1.0)
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Power-of-two aggregation levels `1, 2, 4, ...` capped so the coarsest
/// level still has enough blocks; spans a bit over two decades by default.
pub fn default_levels(n_bins: usize) -> Vec<usize> {
    let mut levels = Vec::new();
    let mut m = 1usize;
    while m <= n_bins / MIN_BLOCKS && m <= 1 << 14 {
        levels.push(m);
        m *= 2;
    }
    levels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::time::SimTime;
    use crate::traffic::{OnuGenerator, OnuTrafficConfig};

    #[test]
    fn iid_noise_estimates_one_half() {
        // Independent counts are the short-range-dependent oracle: H = 0.5.
        let mut rng = RngStream::new(99, 3);
        let counts: Vec<f64> = (0..40_000).map(|_| rng.range_inclusive(0, 100) as f64).collect();
        let h = variance_time_hurst(&counts, &default_levels(counts.len())).unwrap();
        assert!((h - 0.5).abs() <= 0.05, "H = {h}");
    }

    #[test]
    fn pareto_on_off_aggregate_is_long_range_dependent() {
        // ON/OFF sources with shape 1.4 converge to H = (3 - 1.4) / 2 = 0.8.
        let horizon = SimTime::from_secs(30);
        let bin = SimTime::from_millis(2);
        let mut gen =
            OnuGenerator::new(OnuTrafficConfig::default(), 4242, 16, SimTime::ZERO).unwrap();
        let packets = gen.pump_collect(horizon);
        let times: Vec<SimTime> = packets.iter().map(|p| p.arrive_at).collect();
        let counts = bin_counts(&times, bin, horizon);
        assert!(counts.len() >= 10_000);
        let h = variance_time_hurst(&counts, &default_levels(counts.len())).unwrap();
        assert!((h - 0.8).abs() <= 0.07, "H = {h}");
    }

    #[test]
    fn constant_series_rejected() {
        let counts = vec![5.0; 20_000];
        let err = variance_time_hurst(&counts, &default_levels(20_000)).unwrap_err();
        assert!(matches!(err, HurstError::Degenerate { .. }));
    }

    #[test]
    fn linear_trend_flagged_nonstationary() {
        let counts: Vec<f64> = (0..20_000).map(|i| i as f64).collect();
        let err = variance_time_hurst(&counts, &default_levels(20_000)).unwrap_err();
        assert!(matches!(err, HurstError::Nonstationary { .. }), "{err}");
    }

    #[test]
    fn too_few_bins_rejected() {
        let counts = vec![1.0; 100];
        assert!(matches!(
            variance_time_hurst(&counts, &[1, 2, 4]),
            Err(HurstError::TooFewBins { .. })
        ));
    }

    #[test]
    fn narrow_span_rejected() {
        let counts = vec![1.0; 20_000];
        assert!(matches!(
            variance_time_hurst(&counts, &[1, 2, 4, 8]),
            Err(HurstError::SpanTooNarrow)
        ));
    }

    #[test]
    fn bin_counts_places_arrivals() {
        let arrivals = vec![
            SimTime::from_nanos(0),
            SimTime::from_nanos(999),
            SimTime::from_nanos(1000),
            SimTime::from_nanos(2500),
        ];
        let counts = bin_counts(&arrivals, SimTime::from_nanos(1000), SimTime::from_nanos(3000));
        assert_eq!(counts, vec![2.0, 1.0, 1.0]);
    }
}
