//! Assembles one runnable simulation: traffic generators feeding ONU
//! queues, the REPORT/GATE polling loop, the SARSA agent tick, the
//! load-profile tick, and the metrics collector.
//!
//! Traffic is pulled, not pushed: a generator is pumped up to the exact
//! instant its packets could first matter (burst assembly, an agent tick,
//! a re-calibration), so no per-packet events ever enter the event queue.

use std::convert::Infallible;

use crate::engine::{Engine, Event, EventHandler};
use crate::metrics::{
    percentile_nearest_rank, summarize_run, Collector, GrantRecord, LatencySample, RunSummary,
    WindowStats,
};
use crate::pon::{burst_duration, Pon, PonConfig, CONTROL_FRAME_BYTES};
use crate::rl::{AgentConfig, AgentStep, Observation, QRecord, RewardStat, SarsaAgent, TickRecord};
use crate::rng::{RngStream, STREAM_AGENT, STREAM_RTT, STREAM_TRAFFIC_BASE};
use crate::scenario::LoadProfile;
use crate::time::SimTime;
use crate::traffic::{OnuGenerator, OnuTrafficConfig};

/// Cadence at which a dynamic load profile re-calibrates the generators.
pub const LOAD_RECALIBRATION_PERIOD: SimTime = SimTime::from_secs(1);

#[derive(Clone, Copy, Debug)]
pub enum SimEvent {
    /// The ONU assembles and launches its pending burst.
    BurstAssemble { onu: usize },
    /// The OLT finishes receiving a burst; its REPORT drives the next grant.
    BurstReceived { onu: usize },
    /// The agent observes the elapsed interval and retunes W_max.
    AgentTick,
    /// The load profile re-calibrates every traffic generator.
    LoadTick,
}

/// Everything needed to build one deterministic run.
#[derive(Clone, Debug)]
pub struct SimParams {
    pub pon: PonConfig,
    /// One traffic description per ONU, already resolved to the profile's
    /// load at time zero.
    pub traffic: Vec<OnuTrafficConfig>,
    pub agent: Option<AgentConfig>,
    pub managed_onu: usize,
    pub profile: LoadProfile,
    /// Per-ONU multiplier applied to the profile load.
    pub load_scales: Vec<f64>,
    pub seed: u64,
    pub duration: SimTime,
    pub window: SimTime,
    pub trace_grants: bool,
}

/// Per-ONU end-of-run accounting for conservation checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OnuCounters {
    /// Packets the traffic source emitted (generator side).
    pub generated_packets: u64,
    pub generated_bytes: u64,
    /// Packets that entered the ONU queue (always equals generated).
    pub arrived_packets: u64,
    pub arrived_bytes: u64,
    pub delivered_packets: u64,
    pub delivered_bytes: u64,
    pub queued_packets: u64,
    pub queued_bytes: u64,
    pub in_flight_packets: u64,
    pub in_flight_bytes: u64,
}

/// The finished run: windowed rows, run summary, agent artifacts, and
/// invariant evidence.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub window_rows: Vec<WindowStats>,
    pub summary: RunSummary,
    pub grant_trace: Option<Vec<GrantRecord>>,
    pub agent_ticks: Vec<TickRecord>,
    pub agent_steps: Vec<AgentStep>,
    /// Empty when the agent is disabled.
    pub qtable_records: Vec<QRecord>,
    pub counters: Vec<OnuCounters>,
    pub dispatched_events: u64,
    /// Deliveries whose arrival order regressed within an ONU (always 0).
    pub fifo_violations: u64,
    /// Deliveries faster than their own serialization time (always 0).
    pub causality_violations: u64,
}

struct IntervalAccumulator {
    arrived_bytes_mark: u64,
    latency_sum: u128,
    latency_count: u64,
    latencies: Option<Vec<u64>>,
    percentile: f64,
}

/// One wired simulation, host of the event handlers.
pub struct Simulation {
    duration: SimTime,
    pon: Pon,
    generators: Vec<OnuGenerator>,
    profile: LoadProfile,
    load_scales: Vec<f64>,
    agent: Option<SarsaAgent>,
    agent_rng: RngStream,
    managed_onu: usize,
    managed_max_rate_bps: u64,
    collector: Collector,
    interval: IntervalAccumulator,
    last_arrive: Vec<SimTime>,
    fifo_violations: u64,
    causality_violations: u64,
}

impl Simulation {
    pub fn new(params: SimParams) -> Self {
        assert_eq!(params.traffic.len(), params.pon.n_onus);
        assert_eq!(params.load_scales.len(), params.pon.n_onus);
        assert!(params.managed_onu < params.pon.n_onus);

        let mut rtt_rng = RngStream::new(params.seed, STREAM_RTT);
        let pon = Pon::new(params.pon.clone(), &mut rtt_rng);

        let n_substreams = params.traffic.iter().map(|t| t.n_substreams).max().unwrap_or(1) as u64;
        let generators: Vec<OnuGenerator> = params
            .traffic
            .iter()
            .enumerate()
            .map(|(onu, cfg)| {
                let base = STREAM_TRAFFIC_BASE + onu as u64 * n_substreams;
                OnuGenerator::new(cfg.clone(), params.seed, base, SimTime::ZERO)
                    .expect("traffic config validated before simulation build")
            })
            .collect();

        let (agent, percentile_wanted) = match &params.agent {
            Some(cfg) => {
                let pct = match cfg.reward_stat {
                    RewardStat::Mean => None,
                    RewardStat::Percentile { p } => Some(p as f64 / 100.0),
                };
                (Some(SarsaAgent::new(cfg.clone())), pct)
            }
            None => (None, None),
        };

        // The flush margin must exceed the largest possible burst length so
        // no sample can depart inside an already-finalized window.
        let max_w_max = params
            .agent
            .as_ref()
            .map(|a| a.action_set_bytes.iter().copied().max().unwrap_or(0))
            .unwrap_or(0)
            .max(params.pon.default_w_max_bytes);
        let max_burst = burst_duration(
            max_w_max as u64 + CONTROL_FRAME_BYTES as u64,
            params.pon.line_rate_bps,
        );
        let flush_margin =
            SimTime::from_millis(1).max(max_burst + max_burst + params.pon.guard_ns);
        let collector = Collector::new(
            params.window,
            flush_margin,
            params.pon.n_onus,
            params.trace_grants,
        );

        let managed_max_rate_bps = params.traffic[params.managed_onu].max_rate_bps;
        Simulation {
            duration: params.duration,
            pon,
            generators,
            profile: params.profile.clone(),
            load_scales: params.load_scales.clone(),
            agent,
            agent_rng: RngStream::new(params.seed, STREAM_AGENT),
            managed_onu: params.managed_onu,
            managed_max_rate_bps,
            collector,
            interval: IntervalAccumulator {
                arrived_bytes_mark: 0,
                latency_sum: 0,
                latency_count: 0,
                latencies: percentile_wanted.as_ref().map(|_| Vec::new()),
                percentile: percentile_wanted.unwrap_or(0.99),
            },
            last_arrive: vec![SimTime::ZERO; params.pon.n_onus],
            fifo_violations: 0,
            causality_violations: 0,
        }
    }

    fn pump_onu(&mut self, onu: usize, until: SimTime) {
        let generator = &mut self.generators[onu];
        let pon = &mut self.pon;
        generator.pump(until, &mut |p| pon.enqueue(onu, p));
    }

    fn record_delivery(&mut self, sample: &LatencySample, now: SimTime) {
        let onu = sample.onu_id as usize;
        if sample.arrive_at < self.last_arrive[onu] {
            self.fifo_violations += 1;
        }
        self.last_arrive[onu] = sample.arrive_at;
        let own_tx = burst_duration(sample.size as u64, self.pon.config().line_rate_bps);
        if sample.depart_at < sample.arrive_at + own_tx {
            self.causality_violations += 1;
        }
        if onu == self.managed_onu && self.agent.is_some() {
            let latency = sample.latency().as_nanos();
            self.interval.latency_sum += latency as u128;
            self.interval.latency_count += 1;
            if let Some(lats) = &mut self.interval.latencies {
                lats.push(latency);
            }
        }
        self.collector.record_sample(sample, now);
    }

    fn observe_interval(&mut self, interval: SimTime) -> Observation {
        let arrived = self.pon.onus[self.managed_onu].arrived_bytes;
        let delta_bytes = arrived - self.interval.arrived_bytes_mark;
        self.interval.arrived_bytes_mark = arrived;
        let capacity_bits = self.managed_max_rate_bps as f64 * interval.as_secs_f64();
        let avg_load = delta_bytes as f64 * 8.0 / capacity_bits;
        let count = self.interval.latency_count;
        let mean = if count == 0 {
            SimTime::ZERO
        } else {
            SimTime::from_nanos((self.interval.latency_sum / count as u128) as u64)
        };
        let percentile_latency = self.interval.latencies.as_mut().map(|lats| {
            let p = self.interval.percentile;
            if lats.is_empty() {
                SimTime::ZERO
            } else {
                lats.sort_unstable();
                SimTime::from_nanos(percentile_nearest_rank(lats, p))
            }
        });
        if let Some(lats) = &mut self.interval.latencies {
            lats.clear();
        }
        self.interval.latency_sum = 0;
        self.interval.latency_count = 0;
        Observation {
            avg_load,
            mean_latency: mean,
            percentile_latency,
            sample_count: count,
        }
    }

    /// Runs the wired simulation to its horizon and reduces the outputs.
    pub fn run(mut self) -> SimOutput {
        let mut engine: Engine<SimEvent> = Engine::new();

        // Bootstrap: poll every ONU with an empty REPORT at time zero; the
        // polling loop is self-sustaining from then on.
        for onu in 0..self.pon.config().n_onus {
            let grant = self.pon.handle_report(onu, 0, SimTime::ZERO);
            let w_max = self.pon.onus[onu].w_max;
            self.collector.record_grant(&grant, w_max);
            engine.schedule(self.pon.assemble_at(onu), SimEvent::BurstAssemble { onu });
            engine.schedule(
                grant.start_at + grant.duration,
                SimEvent::BurstReceived { onu },
            );
        }
        if let Some(agent) = &self.agent {
            let interval = agent.config().interval_ns;
            if interval <= self.duration {
                engine.schedule(interval, SimEvent::AgentTick);
            }
        }
        if matches!(self.profile, LoadProfile::Dynamic { .. })
            && LOAD_RECALIBRATION_PERIOD <= self.duration
        {
            engine.schedule(LOAD_RECALIBRATION_PERIOD, SimEvent::LoadTick);
        }

        let dispatched = match engine.run_until(self.duration, &mut self) {
            Ok(n) => n,
            Err(never) => match never.source {},
        };

        // Account for arrivals after the last burst so conservation holds
        // over the full horizon.
        for onu in 0..self.pon.config().n_onus {
            self.pump_onu(onu, self.duration);
        }

        let counters: Vec<OnuCounters> = (0..self.pon.config().n_onus)
            .map(|onu| {
                let state = &self.pon.onus[onu];
                OnuCounters {
                    generated_packets: self.generators[onu].generated_packets(),
                    generated_bytes: self.generators[onu].generated_bytes(),
                    arrived_packets: state.arrived_packets,
                    arrived_bytes: state.arrived_bytes,
                    delivered_packets: state.delivered_packets,
                    delivered_bytes: state.delivered_bytes,
                    queued_packets: state.queue_len() as u64,
                    queued_bytes: state.queued_bytes,
                    in_flight_packets: state.in_flight_packets(),
                    in_flight_bytes: state.in_flight_bytes(),
                }
            })
            .collect();

        let cfg = self.pon.config().clone();
        let collected = self.collector.finalize(self.duration);
        let summary = summarize_run(
            &collected,
            cfg.n_wavelengths,
            cfg.line_rate_bps,
            cfg.guard_ns,
            self.duration,
        );
        let (agent_ticks, agent_steps, qtable_records) = match self.agent {
            Some(agent) => {
                let records = agent.q_table().export_records(&agent.config().action_set_bytes);
                (agent.ticks().to_vec(), agent.steps().to_vec(), records)
            }
            None => (Vec::new(), Vec::new(), Vec::new()),
        };
        SimOutput {
            window_rows: collected.window_rows,
            summary,
            grant_trace: collected.grant_trace,
            agent_ticks,
            agent_steps,
            qtable_records,
            counters,
            dispatched_events: dispatched,
            fifo_violations: self.fifo_violations,
            causality_violations: self.causality_violations,
        }
    }
}

impl EventHandler<SimEvent> for Simulation {
    type Error = Infallible;

    fn handle(
        &mut self,
        engine: &mut Engine<SimEvent>,
        event: Event<SimEvent>,
    ) -> Result<(), Infallible> {
        let now = event.fire_at;
        match event.kind {
            SimEvent::BurstAssemble { onu } => {
                // Arrivals up to this instant are eligible for the burst.
                self.pump_onu(onu, now);
                self.pon.begin_burst(onu, now);
            }
            SimEvent::BurstReceived { onu } => {
                let (samples, residual) = self.pon.complete_burst(onu, now);
                for sample in &samples {
                    self.record_delivery(sample, now);
                }
                debug_assert!(self.pon.conservation_holds(onu));
                let grant = self.pon.handle_report(onu, residual, now);
                let w_max = self.pon.onus[onu].w_max;
                self.collector.record_grant(&grant, w_max);
                engine.schedule(self.pon.assemble_at(onu), SimEvent::BurstAssemble { onu });
                engine.schedule(
                    grant.start_at + grant.duration,
                    SimEvent::BurstReceived { onu },
                );
            }
            SimEvent::AgentTick => {
                self.pump_onu(self.managed_onu, now);
                let interval = self
                    .agent
                    .as_ref()
                    .expect("agent tick without agent")
                    .config()
                    .interval_ns;
                let obs = self.observe_interval(interval);
                let agent = self.agent.as_mut().expect("agent tick without agent");
                let w_max = agent.tick(now, &obs, &mut self.agent_rng);
                self.pon
                    .set_w_max(self.managed_onu, w_max)
                    .expect("action set validated against frame size");
                if now + interval <= self.duration {
                    engine.schedule(now + interval, SimEvent::AgentTick);
                }
            }
            SimEvent::LoadTick => {
                let load = self.profile.load_at(now);
                for onu in 0..self.pon.config().n_onus {
                    self.pump_onu(onu, now);
                    let scaled = load * self.load_scales[onu];
                    self.generators[onu]
                        .set_load(scaled, now)
                        .expect("profile loads validated against peak rate");
                }
                if now + LOAD_RECALIBRATION_PERIOD <= self.duration {
                    engine.schedule(now + LOAD_RECALIBRATION_PERIOD, SimEvent::LoadTick);
                }
            }
        }
        Ok(())
    }
}
