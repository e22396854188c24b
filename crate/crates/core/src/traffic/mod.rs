//! Self-similar upstream traffic.
//!
//! Each ONU aggregates several independent substreams that alternate between
//! Pareto-distributed ON and OFF periods. During ON a substream emits whole
//! packets back to back at its peak rate; heavy-tailed period lengths make
//! the aggregate long-range dependent. The mean offered rate is calibrated
//! by holding the ON-period minimum fixed and solving for the OFF-period
//! minimum.

pub mod hurst;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;
use crate::time::{transmission_time, SimTime};

/// Smallest legal Ethernet frame carried by the generator.
pub const MIN_PACKET_BYTES: u32 = 64;
/// Largest legal Ethernet frame carried by the generator.
pub const MAX_PACKET_BYTES: u32 = 1518;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("Pareto shape {0} must lie in (1, 2] for a finite-mean, self-similar source")]
    ShapeOutOfRange(f64),
    #[error("ON-period minimum must be positive")]
    ZeroMinOn,
    #[error("peak rate must be positive")]
    ZeroPeakRate,
    #[error("substream count must be at least 1")]
    NoSubstreams,
    #[error("negative load {0}")]
    NegativeLoad(f64),
    #[error(
        "load {load} unreachable: requires ON fraction {duty:.3} >= 1 \
         ({n} substreams at {peak_rate_bps} bit/s peak against {max_rate_bps} bit/s max)"
    )]
    LoadUnreachable {
        load: f64,
        duty: f64,
        n: usize,
        peak_rate_bps: u64,
        max_rate_bps: u64,
    },
    #[error("packet size model invalid: {0}")]
    BadSizeModel(String),
}

/// Shape of one ON/OFF substream. The OFF-period minimum is not configured;
/// it is derived from the target load by [`calibrate_min_off_ns`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SubstreamConfig {
    /// Pareto shape of ON durations.
    pub shape_on: f64,
    /// Pareto shape of OFF durations.
    pub shape_off: f64,
    /// Minimum ON duration in nanoseconds.
    pub min_on_ns: u64,
    /// Emission rate while ON, bits per second.
    pub peak_rate_bps: u64,
}

impl Default for SubstreamConfig {
    fn default() -> Self {
        // Classic heavy-tail shape giving H near 0.8; sixteen substreams at
        // 250 Mb/s peak let per-interval bursts reach twice the 2 Gb/s cap.
        // A 200 us ON floor keeps enough cycles per run for the offered rate
        // to concentrate while staying far above one packet time.
        SubstreamConfig {
            shape_on: 1.4,
            shape_off: 1.4,
            min_on_ns: 200_000,
            peak_rate_bps: 250_000_000,
        }
    }
}

impl SubstreamConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        for shape in [self.shape_on, self.shape_off] {
            if !(shape > 1.0 && shape <= 2.0) {
                return Err(TrafficError::ShapeOutOfRange(shape));
            }
        }
        if self.min_on_ns == 0 {
            return Err(TrafficError::ZeroMinOn);
        }
        if self.peak_rate_bps == 0 {
            return Err(TrafficError::ZeroPeakRate);
        }
        Ok(())
    }
}

/// Distribution of Ethernet frame sizes in bytes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PacketSizeModel {
    /// Uniform over the inclusive integer range.
    Uniform { min: u32, max: u32 },
    /// Weighted discrete sizes, e.g. a trimodal 64/594/1518 empirical mix.
    Mixture { points: Vec<SizePoint> },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SizePoint {
    pub size: u32,
    pub weight: f64,
}

impl Default for PacketSizeModel {
    fn default() -> Self {
        PacketSizeModel::Uniform {
            min: MIN_PACKET_BYTES,
            max: MAX_PACKET_BYTES,
        }
    }
}

impl PacketSizeModel {
    pub fn validate(&self) -> Result<(), TrafficError> {
        match self {
            PacketSizeModel::Uniform { min, max } => {
                if *min < MIN_PACKET_BYTES || *max > MAX_PACKET_BYTES || min > max {
                    return Err(TrafficError::BadSizeModel(format!(
                        "uniform range [{min}, {max}] outside [{MIN_PACKET_BYTES}, {MAX_PACKET_BYTES}]"
                    )));
                }
            }
            PacketSizeModel::Mixture { points } => {
                if points.is_empty() {
                    return Err(TrafficError::BadSizeModel("empty mixture".into()));
                }
                for p in points {
                    if p.size < MIN_PACKET_BYTES || p.size > MAX_PACKET_BYTES {
                        return Err(TrafficError::BadSizeModel(format!(
                            "mixture size {} outside [{MIN_PACKET_BYTES}, {MAX_PACKET_BYTES}]",
                            p.size
                        )));
                    }
                    if !(p.weight > 0.0 && p.weight.is_finite()) {
                        return Err(TrafficError::BadSizeModel(format!(
                            "mixture weight {} not positive",
                            p.weight
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut RngStream) -> u32 {
        match self {
            PacketSizeModel::Uniform { min, max } => {
                rng.range_inclusive(*min as u64, *max as u64) as u32
            }
            PacketSizeModel::Mixture { points } => {
                let total: f64 = points.iter().map(|p| p.weight).sum();
                let mut target = rng.unit() * total;
                for p in points {
                    if target < p.weight {
                        return p.size;
                    }
                    target -= p.weight;
                }
                points.last().expect("validated non-empty").size
            }
        }
    }

    /// Mean frame size in bytes.
    pub fn mean_size(&self) -> f64 {
        match self {
            PacketSizeModel::Uniform { min, max } => (*min as f64 + *max as f64) / 2.0,
            PacketSizeModel::Mixture { points } => {
                let total: f64 = points.iter().map(|p| p.weight).sum();
                points.iter().map(|p| p.weight * p.size as f64).sum::<f64>() / total
            }
        }
    }

    /// Mean squared frame size, for the renewal residual of the frame that
    /// straddles an ON-period deadline.
    pub fn mean_size_sq(&self) -> f64 {
        match self {
            PacketSizeModel::Uniform { min, max } => {
                let (a, b) = (*min as u64, *max as u64);
                let sum_sq = |n: u64| n * (n + 1) * (2 * n + 1) / 6;
                (sum_sq(b) - sum_sq(a - 1)) as f64 / (b - a + 1) as f64
            }
            PacketSizeModel::Mixture { points } => {
                let total: f64 = points.iter().map(|p| p.weight).sum();
                points
                    .iter()
                    .map(|p| p.weight * p.size as f64 * p.size as f64)
                    .sum::<f64>()
                    / total
            }
        }
    }
}

/// Full description of one ONU's offered traffic.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OnuTrafficConfig {
    pub n_substreams: usize,
    #[serde(default)]
    pub substream: SubstreamConfig,
    /// Offered load as a fraction of `max_rate_bps`.
    pub load: f64,
    /// The ONU's maximum mean traffic rate, bits per second.
    pub max_rate_bps: u64,
    #[serde(default)]
    pub size_model: PacketSizeModel,
}

impl Default for OnuTrafficConfig {
    fn default() -> Self {
        OnuTrafficConfig {
            n_substreams: 16,
            substream: SubstreamConfig::default(),
            load: 0.5,
            max_rate_bps: 2_000_000_000,
            size_model: PacketSizeModel::default(),
        }
    }
}

impl OnuTrafficConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.n_substreams == 0 {
            return Err(TrafficError::NoSubstreams);
        }
        self.substream.validate()?;
        self.size_model.validate()?;
        if self.load < 0.0 || !self.load.is_finite() {
            return Err(TrafficError::NegativeLoad(self.load));
        }
        if self.load > 0.0 {
            // Fails early if the load cannot be reached at this peak rate.
            calibrate_min_off_ns(self, self.load)?;
        }
        Ok(())
    }
}

/// One generated arrival: when it was enqueued at the ONU and its size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packet {
    pub arrive_at: SimTime,
    pub size: u32,
}

/// Inverse-CDF sample of a Pareto distribution: `minimum * u^(-1/shape)`.
///
/// `u` must lie in (0, 1); the result is never below `minimum`.
pub fn pareto_sample(shape: f64, minimum: f64, u: f64) -> f64 {
    debug_assert!(shape > 1.0, "shape {shape} <= 1 has no finite mean");
    debug_assert!(minimum > 0.0);
    debug_assert!(u > 0.0 && u < 1.0);
    minimum * u.powf(-1.0 / shape)
}

/// Mean of a Pareto distribution with shape > 1: `shape * minimum / (shape - 1)`.
pub fn pareto_mean(shape: f64, minimum: f64) -> f64 {
    debug_assert!(shape > 1.0);
    shape * minimum / (shape - 1.0)
}

/// Solves for the OFF-period minimum (in ns) that makes the aggregate of
/// `cfg.n_substreams` sources hit `load * max_rate_bps` on average:
///
/// n * peak * E[ON] / (E[ON] + E[OFF]) = load * max_rate
///
/// with E[Pareto(shape, m)] = shape * m / (shape - 1). The ON side stays
/// fixed so burst structure is invariant across loads.
///
/// Because a source finishes the frame that straddles the ON deadline, the
/// effective ON time exceeds the drawn one by the renewal residual of the
/// frame-size distribution, E[S^2] / (2 E[S]) at the peak rate; the solve
/// uses the corrected ON mean so realized rates land on target.
pub fn calibrate_min_off_ns(cfg: &OnuTrafficConfig, load: f64) -> Result<f64, TrafficError> {
    let sub = &cfg.substream;
    debug_assert!(load > 0.0);
    let duty = load * cfg.max_rate_bps as f64 / (cfg.n_substreams as f64 * sub.peak_rate_bps as f64);
    if duty >= 1.0 {
        return Err(TrafficError::LoadUnreachable {
            load,
            duty,
            n: cfg.n_substreams,
            peak_rate_bps: sub.peak_rate_bps,
            max_rate_bps: cfg.max_rate_bps,
        });
    }
    let residual_bytes = cfg.size_model.mean_size_sq() / (2.0 * cfg.size_model.mean_size());
    let residual_ns = residual_bytes * 8.0 * 1e9 / sub.peak_rate_bps as f64;
    let e_on = pareto_mean(sub.shape_on, sub.min_on_ns as f64) + residual_ns;
    let e_off = e_on * (1.0 - duty) / duty;
    Ok(e_off * (sub.shape_off - 1.0) / sub.shape_off)
}

/// One ON/OFF source. Packet starts before the ON deadline are emitted in
/// full; the packet that would overrun the deadline completes and the OFF
/// period begins at its completion.
#[derive(Clone, Debug)]
struct Substream {
    rng: RngStream,
    min_off_ns: f64,
    /// Exclusive deadline of the current ON period.
    on_end: SimTime,
    /// Start time of the next packet (valid while the source is live).
    next_at: SimTime,
    live: bool,
}

impl Substream {
    fn idle(rng: RngStream) -> Self {
        Substream {
            rng,
            min_off_ns: 0.0,
            on_end: SimTime::ZERO,
            next_at: SimTime::ZERO,
            live: false,
        }
    }

    fn draw_duration(&mut self, shape: f64, minimum_ns: f64) -> SimTime {
        let u = self.rng.open_unit();
        let ns = pareto_sample(shape, minimum_ns, u);
        // Ceil keeps the duration at or above the distribution minimum in
        // integer nanoseconds; the saturating cast lets an astronomically
        // long tail draw simply outlive the run.
        SimTime::from_nanos(ns.ceil().max(1.0).min(u64::MAX as f64) as u64)
    }

    /// Begins a fresh OFF/ON cycle at `at` (generator start or re-enable).
    fn restart(&mut self, at: SimTime, cfg: &SubstreamConfig) {
        let off = self.draw_duration(cfg.shape_off, self.min_off_ns);
        let on = self.draw_duration(cfg.shape_on, cfg.min_on_ns as f64);
        let on_start = at + off;
        self.on_end = on_start + on;
        self.next_at = on_start;
        self.live = true;
    }

    /// Emits the packet at `next_at` and advances the phase machine.
    fn emit(&mut self, cfg: &SubstreamConfig, size_model: &PacketSizeModel) -> Packet {
        debug_assert!(self.live);
        let size = size_model.sample(&mut self.rng);
        let at = self.next_at;
        self.next_at = at + transmission_time(size as u64, cfg.peak_rate_bps);
        if self.next_at >= self.on_end {
            // ON period exhausted once this packet completes.
            let off = self.draw_duration(cfg.shape_off, self.min_off_ns);
            let on = self.draw_duration(cfg.shape_on, cfg.min_on_ns as f64);
            let on_start = self.next_at + off;
            self.on_end = on_start + on;
            self.next_at = on_start;
        }
        Packet {
            arrive_at: at,
            size,
        }
    }
}

/// The per-ONU aggregate of substreams, pumped lazily by the simulation.
#[derive(Clone, Debug)]
pub struct OnuGenerator {
    cfg: OnuTrafficConfig,
    substreams: Vec<Substream>,
    pumped_to: SimTime,
    generated_packets: u64,
    generated_bytes: u64,
}

impl OnuGenerator {
    /// Builds a generator whose substream `k` draws from RNG stream
    /// `stream_base + k`, calibrated to `cfg.load` starting at `start`.
    pub fn new(
        cfg: OnuTrafficConfig,
        seed: u64,
        stream_base: u64,
        start: SimTime,
    ) -> Result<Self, TrafficError> {
        cfg.validate()?;
        let substreams = (0..cfg.n_substreams)
            .map(|k| Substream::idle(RngStream::new(seed, stream_base + k as u64)))
            .collect();
        let mut gen = OnuGenerator {
            cfg,
            substreams,
            pumped_to: start,
            generated_packets: 0,
            generated_bytes: 0,
        };
        let load = gen.cfg.load;
        gen.set_load(load, start)?;
        Ok(gen)
    }

    pub fn config(&self) -> &OnuTrafficConfig {
        &self.cfg
    }

    pub fn generated_packets(&self) -> u64 {
        self.generated_packets
    }

    pub fn generated_bytes(&self) -> u64 {
        self.generated_bytes
    }

    /// Re-calibrates the OFF-period minimum for a new load fraction.
    ///
    /// The generator must already be pumped to `at`. In-flight ON/OFF phases
    /// are not disturbed; only future period draws use the new minimum.
    pub fn set_load(&mut self, load: f64, at: SimTime) -> Result<(), TrafficError> {
        assert!(at >= self.pumped_to, "set_load at {at} before pump horizon");
        if load < 0.0 || !load.is_finite() {
            return Err(TrafficError::NegativeLoad(load));
        }
        self.cfg.load = load;
        if load == 0.0 {
            for sub in &mut self.substreams {
                sub.live = false;
            }
            return Ok(());
        }
        let min_off_ns = calibrate_min_off_ns(&self.cfg, load)?;
        for sub in &mut self.substreams {
            sub.min_off_ns = min_off_ns;
            if !sub.live {
                sub.restart(at, &self.cfg.substream);
            }
        }
        Ok(())
    }

    /// Emits every arrival with `arrive_at <= until`, in time order (ties
    /// broken by substream index), into `sink`.
    pub fn pump(&mut self, until: SimTime, sink: &mut impl FnMut(Packet)) {
        loop {
            let mut best: Option<(usize, SimTime)> = None;
            for (idx, sub) in self.substreams.iter().enumerate() {
                if !sub.live {
                    continue;
                }
                match best {
                    Some((_, t)) if t <= sub.next_at => {}
                    _ => best = Some((idx, sub.next_at)),
                }
            }
            match best {
                Some((idx, t)) if t <= until => {
                    let packet =
                        self.substreams[idx].emit(&self.cfg.substream, &self.cfg.size_model);
                    self.generated_packets += 1;
                    self.generated_bytes += packet.size as u64;
                    sink(packet);
                }
                _ => break,
            }
        }
        if until > self.pumped_to {
            self.pumped_to = until;
        }
    }

    /// Collects all arrivals up to `until` into a vector (test convenience).
    pub fn pump_collect(&mut self, until: SimTime) -> Vec<Packet> {
        let mut out = Vec::new();
        self.pump(until, &mut |p| out.push(p));
        out
    }
}
