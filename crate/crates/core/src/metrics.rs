//! Latency accounting: per-packet samples, fixed-width windowed statistics,
//! whole-run summaries, and the CSV files they serialize to.
//!
//! A sample belongs to the window containing its departure instant.
//! Percentiles are nearest-rank: the p-th percentile of n sorted values is
//! the element at 1-based index ceil(p * n). All output formatting is
//! locale-free and byte-deterministic for a fixed config and seed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::pon::Grant;
use crate::rl::{QRecord, TickRecord};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> MetricsError {
    MetricsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One delivered packet's end-to-end upstream delay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencySample {
    pub onu_id: u32,
    pub arrive_at: SimTime,
    pub depart_at: SimTime,
    pub size: u32,
}

impl LatencySample {
    pub fn latency(&self) -> SimTime {
        self.depart_at - self.arrive_at
    }
}

/// Aggregated latency figures for one (window, ONU) cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowStats {
    pub window_start: SimTime,
    pub window_len: SimTime,
    pub onu_id: u32,
    pub count: u64,
    pub mean_latency: SimTime,
    pub p99_latency: SimTime,
    pub max_latency: SimTime,
    pub delivered_bytes: u64,
}

impl WindowStats {
    /// Windows with no delivered packets report zero latencies.
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Nearest-rank percentile of an ascending-sorted slice: the element at
/// 1-based index ceil(p * n), clamped into the slice.
pub fn percentile_nearest_rank(sorted: &[u64], p: f64) -> u64 {
    assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn rounded_mean(sum: u128, count: u64) -> SimTime {
    if count == 0 {
        return SimTime::ZERO;
    }
    SimTime::from_nanos(((sum + count as u128 / 2) / count as u128) as u64)
}

/// Computes one window's statistics from samples (any order), keeping only
/// those matching `onu_id` when a filter is given.
pub fn window_stats(
    samples: &[LatencySample],
    onu_filter: Option<u32>,
    window_start: SimTime,
    window_len: SimTime,
) -> WindowStats {
    let mut latencies: Vec<u64> = Vec::new();
    let mut delivered_bytes = 0u64;
    let mut sum = 0u128;
    for s in samples {
        if onu_filter.is_some_and(|id| id != s.onu_id) {
            continue;
        }
        let l = s.latency().as_nanos();
        latencies.push(l);
        sum += l as u128;
        delivered_bytes += s.size as u64;
    }
    latencies.sort_unstable();
    let count = latencies.len() as u64;
    WindowStats {
        window_start,
        window_len,
        onu_id: onu_filter.unwrap_or(0),
        count,
        mean_latency: rounded_mean(sum, count),
        p99_latency: if latencies.is_empty() {
            SimTime::ZERO
        } else {
            SimTime::from_nanos(percentile_nearest_rank(&latencies, 0.99))
        },
        max_latency: SimTime::from_nanos(latencies.last().copied().unwrap_or(0)),
        delivered_bytes,
    }
}

/// One grant as seen by the scheduler, for invariant checking.
#[derive(Clone, Copy, Debug)]
pub struct GrantRecord {
    pub onu_id: usize,
    pub wavelength: usize,
    pub start_at: SimTime,
    pub duration: SimTime,
    pub size: u32,
    /// The ONU's W_max at the moment the grant was sized.
    pub w_max_at_grant: u32,
}

#[derive(Clone, Debug, Default)]
struct WindowAccumulator {
    latencies: Vec<u64>,
    sum: u128,
    delivered_bytes: u64,
}

#[derive(Clone, Debug, Default)]
struct OnuRunAggregate {
    latencies: Vec<u64>,
    sum: u128,
    max: u64,
    delivered_bytes: u64,
}

/// Streaming collector owned by one run.
///
/// Bursts complete out of order across wavelengths by at most one burst
/// duration, so a window is finalized (sorted, reduced, freed) once the
/// clock passes its end by a safety margin; rows therefore emit in
/// `(window, onu)` order with bounded memory per window.
#[derive(Clone, Debug)]
pub struct Collector {
    window: SimTime,
    flush_margin: SimTime,
    n_onus: usize,
    open: BTreeMap<u64, Vec<WindowAccumulator>>,
    next_window_to_flush: u64,
    rows: Vec<WindowStats>,
    per_onu: Vec<OnuRunAggregate>,
    grant_trace: Option<Vec<GrantRecord>>,
    total_grants: u64,
    granted_data_bytes: u64,
}

impl Collector {
    /// `flush_margin` must exceed the largest possible burst duration.
    pub fn new(window: SimTime, flush_margin: SimTime, n_onus: usize, trace_grants: bool) -> Self {
        assert!(window > SimTime::ZERO);
        Collector {
            window,
            flush_margin,
            n_onus,
            open: BTreeMap::new(),
            next_window_to_flush: 0,
            rows: Vec::new(),
            per_onu: vec![OnuRunAggregate::default(); n_onus],
            grant_trace: if trace_grants { Some(Vec::new()) } else { None },
            total_grants: 0,
            granted_data_bytes: 0,
        }
    }

    pub fn window_len(&self) -> SimTime {
        self.window
    }

    pub fn record_sample(&mut self, sample: &LatencySample, now: SimTime) {
        let latency = sample.latency().as_nanos();
        let window_index = sample.depart_at.div_nanos(self.window.as_nanos());
        assert!(
            window_index >= self.next_window_to_flush,
            "sample departs in an already-flushed window; widen the flush margin"
        );
        let accs = self
            .open
            .entry(window_index)
            .or_insert_with(|| vec![WindowAccumulator::default(); self.n_onus]);
        let acc = &mut accs[sample.onu_id as usize];
        acc.latencies.push(latency);
        acc.sum += latency as u128;
        acc.delivered_bytes += sample.size as u64;

        let run = &mut self.per_onu[sample.onu_id as usize];
        run.latencies.push(latency);
        run.sum += latency as u128;
        run.max = run.max.max(latency);
        run.delivered_bytes += sample.size as u64;

        self.flush_completed(now);
    }

    pub fn record_grant(&mut self, grant: &Grant, w_max_at_grant: u32) {
        self.total_grants += 1;
        self.granted_data_bytes += grant.size as u64;
        if let Some(trace) = &mut self.grant_trace {
            trace.push(GrantRecord {
                onu_id: grant.onu_id,
                wavelength: grant.wavelength,
                start_at: grant.start_at,
                duration: grant.duration,
                size: grant.size,
                w_max_at_grant,
            });
        }
    }

    fn flush_completed(&mut self, now: SimTime) {
        loop {
            let window_end =
                SimTime::from_nanos((self.next_window_to_flush + 1) * self.window.as_nanos());
            if window_end + self.flush_margin > now {
                break;
            }
            self.flush_one();
        }
    }

    fn flush_one(&mut self) {
        let index = self.next_window_to_flush;
        self.next_window_to_flush += 1;
        let start = SimTime::from_nanos(index * self.window.as_nanos());
        let accs = self.open.remove(&index);
        for onu_id in 0..self.n_onus {
            let row = match accs.as_ref().map(|a| &a[onu_id]) {
                Some(acc) if !acc.latencies.is_empty() => {
                    let mut sorted = acc.latencies.clone();
                    sorted.sort_unstable();
                    WindowStats {
                        window_start: start,
                        window_len: self.window,
                        onu_id: onu_id as u32,
                        count: sorted.len() as u64,
                        mean_latency: rounded_mean(acc.sum, sorted.len() as u64),
                        p99_latency: SimTime::from_nanos(percentile_nearest_rank(&sorted, 0.99)),
                        max_latency: SimTime::from_nanos(*sorted.last().expect("non-empty")),
                        delivered_bytes: acc.delivered_bytes,
                    }
                }
                _ => WindowStats {
                    window_start: start,
                    window_len: self.window,
                    onu_id: onu_id as u32,
                    count: 0,
                    mean_latency: SimTime::ZERO,
                    p99_latency: SimTime::ZERO,
                    max_latency: SimTime::ZERO,
                    delivered_bytes: 0,
                },
            };
            self.rows.push(row);
        }
    }

    /// Flushes every window up to `duration` and returns the finished rows
    /// plus per-ONU aggregates.
    pub fn finalize(mut self, duration: SimTime) -> CollectedRun {
        let n_windows = duration.as_nanos().div_ceil(self.window.as_nanos());
        while self.next_window_to_flush < n_windows {
            self.flush_one();
        }
        debug_assert!(self.open.is_empty());
        CollectedRun {
            window_rows: self.rows,
            per_onu: self.per_onu,
            grant_trace: self.grant_trace,
            total_grants: self.total_grants,
            granted_data_bytes: self.granted_data_bytes,
        }
    }
}

/// Everything the collector gathered over one run.
#[derive(Clone, Debug)]
pub struct CollectedRun {
    pub window_rows: Vec<WindowStats>,
    per_onu: Vec<OnuRunAggregate>,
    pub grant_trace: Option<Vec<GrantRecord>>,
    pub total_grants: u64,
    pub granted_data_bytes: u64,
}

/// Per-ONU whole-run aggregate, one row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OnuSummary {
    pub onu_id: u32,
    pub packets: u64,
    pub mean_latency: SimTime,
    pub p99_latency: SimTime,
    pub max_latency: SimTime,
    pub throughput_bps: u64,
}

/// Run-level aggregates derived from the collected samples.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub per_onu: Vec<OnuSummary>,
    pub total_packets: u64,
    pub total_delivered_bytes: u64,
    pub total_grants: u64,
    pub granted_data_bytes: u64,
    /// Delivered data bits over deliverable capacity.
    pub utilization: f64,
    /// Fraction of capacity-time spent in guard intervals.
    pub guard_overhead_fraction: f64,
    /// Delivered data bytes over granted data bytes.
    pub grant_utilization: f64,
}

/// Reduces a collected run against the plant capacity.
pub fn summarize_run(
    collected: &CollectedRun,
    n_wavelengths: usize,
    line_rate_bps: u64,
    guard: SimTime,
    duration: SimTime,
) -> RunSummary {
    let mut per_onu = Vec::with_capacity(collected.per_onu.len());
    let mut total_packets = 0u64;
    let mut total_delivered_bytes = 0u64;
    let duration_ns = duration.as_nanos().max(1);
    for (onu_id, agg) in collected.per_onu.iter().enumerate() {
        let mut sorted = agg.latencies.clone();
        sorted.sort_unstable();
        let packets = sorted.len() as u64;
        total_packets += packets;
        total_delivered_bytes += agg.delivered_bytes;
        per_onu.push(OnuSummary {
            onu_id: onu_id as u32,
            packets,
            mean_latency: rounded_mean(agg.sum, packets),
            p99_latency: if sorted.is_empty() {
                SimTime::ZERO
            } else {
                SimTime::from_nanos(percentile_nearest_rank(&sorted, 0.99))
            },
            max_latency: SimTime::from_nanos(agg.max),
            throughput_bps: ((agg.delivered_bytes as u128 * 8 * 1_000_000_000)
                / duration_ns as u128) as u64,
        });
    }
    let capacity_bit_ns = n_wavelengths as u128 * line_rate_bps as u128 * duration_ns as u128;
    let utilization = (total_delivered_bytes as f64 * 8.0) * 1e9 / capacity_bit_ns as f64;
    let guard_ns_total = collected.total_grants as u128 * guard.as_nanos() as u128;
    let guard_overhead_fraction =
        guard_ns_total as f64 / (n_wavelengths as u128 * duration_ns as u128) as f64;
    let grant_utilization = if collected.granted_data_bytes == 0 {
        0.0
    } else {
        total_delivered_bytes as f64 / collected.granted_data_bytes as f64
    };
    RunSummary {
        per_onu,
        total_packets,
        total_delivered_bytes,
        total_grants: collected.total_grants,
        granted_data_bytes: collected.granted_data_bytes,
        utilization,
        guard_overhead_fraction,
        grant_utilization,
    }
}

// ---------------------------------------------------------------------------
// CSV serialization
// ---------------------------------------------------------------------------

pub const TIMESERIES_FILE: &str = "latency_timeseries.csv";
pub const AGENT_LOG_FILE: &str = "agent_log.csv";
pub const QTABLE_FILE: &str = "qtable.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

const TIMESERIES_HEADER: &str =
    "window_start_ns,onu_id,count,mean_latency_ns,p99_latency_ns,max_latency_ns,delivered_bytes";
const AGENT_LOG_HEADER: &str = "tick_time_ns,state_bin,action_w_max_bytes,reward,epsilon";
const QTABLE_HEADER: &str = "state_bin,w_max_bytes,q_value,visits";
const SUMMARY_HEADER: &str =
    "onu_id,packets,mean_latency_ns,p99_latency_ns,max_latency_ns,throughput_bps";

pub fn write_timeseries(path: &Path, rows: &[WindowStats]) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "{TIMESERIES_HEADER}")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.window_start.as_nanos(),
                r.onu_id,
                r.count,
                r.mean_latency.as_nanos(),
                r.p99_latency.as_nanos(),
                r.max_latency.as_nanos(),
                r.delivered_bytes
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn write_agent_log(path: &Path, rows: &[TickRecord]) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "{AGENT_LOG_HEADER}")?;
        for r in rows {
            // Floats use Rust's shortest round-trip display: deterministic
            // and re-parseable to the same bits.
            writeln!(
                w,
                "{},{},{},{},{}",
                r.at.as_nanos(),
                r.state_bin,
                r.w_max_bytes,
                r.reward,
                r.epsilon
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn write_qtable(path: &Path, records: &[QRecord]) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "{QTABLE_HEADER}")?;
        for r in records {
            writeln!(
                w,
                "{},{},{},{}",
                r.state_bin, r.w_max_bytes, r.q_value, r.visits
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<(), MetricsError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "{SUMMARY_HEADER}")?;
        for r in &summary.per_onu {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.onu_id,
                r.packets,
                r.mean_latency.as_nanos(),
                r.p99_latency.as_nanos(),
                r.max_latency.as_nanos(),
                r.throughput_bps
            )?;
        }
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

fn read_rows<T>(
    path: &Path,
    expected_header: &str,
    mut parse: impl FnMut(&[&str]) -> Option<T>,
) -> Result<Vec<T>, MetricsError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if i == 0 {
            if line != expected_header {
                return Err(MetricsError::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    reason: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match parse(&fields) {
            Some(row) => rows.push(row),
            None => {
                return Err(MetricsError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: line,
                })
            }
        }
    }
    Ok(rows)
}

pub fn read_timeseries(path: &Path) -> Result<Vec<WindowStats>, MetricsError> {
    read_rows(path, TIMESERIES_HEADER, |f| {
        if f.len() != 7 {
            return None;
        }
        Some(WindowStats {
            window_start: SimTime::from_nanos(f[0].parse().ok()?),
            window_len: SimTime::ZERO, // not serialized; caller knows it
            onu_id: f[1].parse().ok()?,
            count: f[2].parse().ok()?,
            mean_latency: SimTime::from_nanos(f[3].parse().ok()?),
            p99_latency: SimTime::from_nanos(f[4].parse().ok()?),
            max_latency: SimTime::from_nanos(f[5].parse().ok()?),
            delivered_bytes: f[6].parse().ok()?,
        })
    })
}

pub fn read_summary(path: &Path) -> Result<Vec<OnuSummary>, MetricsError> {
    read_rows(path, SUMMARY_HEADER, |f| {
        if f.len() != 6 {
            return None;
        }
        Some(OnuSummary {
            onu_id: f[0].parse().ok()?,
            packets: f[1].parse().ok()?,
            mean_latency: SimTime::from_nanos(f[2].parse().ok()?),
            p99_latency: SimTime::from_nanos(f[3].parse().ok()?),
            max_latency: SimTime::from_nanos(f[4].parse().ok()?),
            throughput_bps: f[5].parse().ok()?,
        })
    })
}

pub fn read_qtable(path: &Path) -> Result<Vec<QRecord>, MetricsError> {
    read_rows(path, QTABLE_HEADER, |f| {
        if f.len() != 4 {
            return None;
        }
        Some(QRecord {
            state_bin: f[0].parse().ok()?,
            w_max_bytes: f[1].parse().ok()?,
            q_value: f[2].parse().ok()?,
            visits: f[3].parse().ok()?,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(onu: u32, arrive_us: u64, latency_us: u64, size: u32) -> LatencySample {
        LatencySample {
            onu_id: onu,
            arrive_at: SimTime::from_micros(arrive_us),
            depart_at: SimTime::from_micros(arrive_us + latency_us),
            size,
        }
    }

    #[test]
    fn window_stats_mean_and_max() {
        let samples = vec![
            sample(0, 0, 1_000, 100),
            sample(0, 1, 2_000, 100),
            sample(0, 2, 3_000, 100),
        ];
        let stats = window_stats(&samples, Some(0), SimTime::ZERO, SimTime::from_millis(100));
        assert_eq!(stats.count, 3);
        assert_eq!(stats.mean_latency, SimTime::from_millis(2));
        assert_eq!(stats.max_latency, SimTime::from_millis(3));
        assert_eq!(stats.delivered_bytes, 300);
    }

    #[test]
    fn window_stats_single_sample() {
        let samples = vec![sample(0, 0, 500, 64)];
        let stats = window_stats(&samples, Some(0), SimTime::ZERO, SimTime::from_millis(100));
        assert_eq!(stats.mean_latency, SimTime::from_micros(500));
        assert_eq!(stats.p99_latency, SimTime::from_micros(500));
        assert_eq!(stats.max_latency, SimTime::from_micros(500));
    }

    #[test]
    fn p99_of_one_hundred_values_is_rank_99() {
        // Latencies 1..=100 us: nearest rank ceil(0.99 * 100) = 99.
        let samples: Vec<LatencySample> =
            (1..=100).map(|i| sample(0, 0, i, 64)).collect();
        let stats = window_stats(&samples, Some(0), SimTime::ZERO, SimTime::from_millis(100));
        assert_eq!(stats.p99_latency, SimTime::from_micros(99));
    }

    #[test]
    fn percentile_matches_brute_force_on_random_input() {
        let mut rng = crate::rng::RngStream::new(5, 11);
        for n in [1usize, 2, 3, 10, 99, 100, 101, 1000] {
            let mut values: Vec<u64> = (0..n).map(|_| rng.range_inclusive(0, 10_000)).collect();
            values.sort_unstable();
            for p in [0.5, 0.9, 0.99, 1.0] {
                // Brute-force nearest rank straight from the definition.
                let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
                assert_eq!(percentile_nearest_rank(&values, p), values[rank - 1]);
            }
        }
    }

    #[test]
    fn empty_window_flagged() {
        let stats = window_stats(&[], Some(3), SimTime::ZERO, SimTime::from_millis(100));
        assert!(stats.is_empty());
        assert_eq!(stats.mean_latency, SimTime::ZERO);
    }

    fn collect(samples: &[LatencySample], n_onus: usize, duration: SimTime) -> CollectedRun {
        let mut c = Collector::new(
            SimTime::from_millis(100),
            SimTime::from_millis(1),
            n_onus,
            false,
        );
        for s in samples {
            c.record_sample(s, s.depart_at);
        }
        c.finalize(duration)
    }

    #[test]
    fn collector_emits_rows_for_every_window_and_onu() {
        let samples = vec![sample(0, 10, 50, 100), sample(1, 150_000, 40, 200)];
        let run = collect(&samples, 2, SimTime::from_millis(300));
        // 3 windows x 2 onus.
        assert_eq!(run.window_rows.len(), 6);
        for (i, row) in run.window_rows.iter().enumerate() {
            assert_eq!(row.window_start, SimTime::from_millis(100 * (i as u64 / 2)));
            assert_eq!(row.onu_id as usize, i % 2);
        }
        assert_eq!(run.window_rows[0].count, 1);
        assert_eq!(run.window_rows[3].count, 1); // window 1, onu 1
        assert_eq!(run.window_rows[5].count, 0);
    }

    #[test]
    fn window_bytes_sum_to_run_total() {
        let mut samples = Vec::new();
        let mut rng = crate::rng::RngStream::new(8, 12);
        for i in 0..5_000u64 {
            let onu = (i % 3) as u32;
            let depart_us = rng.range_inclusive(0, 900_000);
            samples.push(sample(onu, depart_us, 25, 64 + (i % 1400) as u32));
        }
        // Samples must be recorded with a non-decreasing clock.
        samples.sort_by_key(|s| s.depart_at);
        let run = collect(&samples, 3, SimTime::from_secs(1));
        let window_total: u64 = run.window_rows.iter().map(|r| r.delivered_bytes).sum();
        let sample_total: u64 = samples.iter().map(|s| s.size as u64).sum();
        assert_eq!(window_total, sample_total);
        let count_total: u64 = run.window_rows.iter().map(|r| r.count).sum();
        assert_eq!(count_total, samples.len() as u64);
    }

    #[test]
    fn summary_utilization_matches_duty_cycle() {
        // A single saturated wavelength: 30000 B bursts every
        // burst(30064 B) + 1 us of guard.
        let line_rate = 25_000_000_000u64;
        let guard = SimTime::from_micros(1);
        let burst = crate::pon::burst_duration(30_064, line_rate);
        let cycle = burst + guard;
        let duration = SimTime::from_nanos(cycle.as_nanos() * 1_000);
        let mut collector = Collector::new(SimTime::from_millis(100), cycle, 1, false);
        let mut t = SimTime::ZERO;
        for _ in 0..1_000 {
            let g = Grant {
                onu_id: 0,
                wavelength: 0,
                start_at: t,
                size: 30_000,
                duration: burst,
            };
            collector.record_grant(&g, 30_000);
            collector.record_sample(
                &LatencySample {
                    onu_id: 0,
                    arrive_at: t,
                    depart_at: t + burst,
                    size: 30_000,
                },
                t + burst,
            );
            t += cycle;
        }
        let run = collector.finalize(duration);
        let summary = summarize_run(&run, 1, line_rate, guard, duration);
        let expected = 30_000.0 * 8.0 / (cycle.as_nanos() as f64 * 25.0);
        assert!((summary.utilization - expected).abs() < 1e-6);
        assert!((summary.utilization - 0.904).abs() < 0.01);
        assert!((summary.guard_overhead_fraction - 1_000.0 / cycle.as_nanos() as f64).abs() < 1e-9);
        assert!((summary.grant_utilization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn summary_zero_traffic() {
        let run = collect(&[], 2, SimTime::from_secs(1));
        let summary = summarize_run(&run, 2, 25_000_000_000, SimTime::from_micros(1), SimTime::from_secs(1));
        assert_eq!(summary.total_packets, 0);
        assert_eq!(summary.utilization, 0.0);
        assert_eq!(summary.per_onu[0].throughput_bps, 0);
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![sample(0, 10, 50, 100), sample(1, 20, 75, 200)];
        let run = collect(&samples, 2, SimTime::from_millis(100));
        let ts_path = dir.path().join(TIMESERIES_FILE);
        write_timeseries(&ts_path, &run.window_rows).unwrap();
        let read_back = read_timeseries(&ts_path).unwrap();
        assert_eq!(read_back.len(), run.window_rows.len());
        for (a, b) in read_back.iter().zip(&run.window_rows) {
            assert_eq!(a.count, b.count);
            assert_eq!(a.mean_latency, b.mean_latency);
            assert_eq!(a.delivered_bytes, b.delivered_bytes);
        }

        let summary =
            summarize_run(&run, 2, 25_000_000_000, SimTime::from_micros(1), SimTime::from_millis(100));
        let sum_path = dir.path().join(SUMMARY_FILE);
        write_summary(&sum_path, &summary).unwrap();
        assert_eq!(read_summary(&sum_path).unwrap(), summary.per_onu);
    }

    #[test]
    fn header_only_files_for_empty_runs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(TIMESERIES_FILE);
        write_timeseries(&path, &[]).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(content.trim(), TIMESERIES_HEADER);
        assert!(read_timeseries(&path).unwrap().is_empty());
    }

    #[test]
    fn io_failure_carries_path_context() {
        let err = write_timeseries(Path::new("/nonexistent-dir/x.csv"), &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
