//! Deterministic discrete-event simulation of the NG-EPON upstream with an
//! IPACT-style dynamic bandwidth allocator and a SARSA control loop that
//! adapts one ONU's maximum grant size to hold its average latency under a
//! target.
//!
//! Module map:
//! - [`engine`] / [`time`] / [`rng`] — event queue, integer-ns clock, and
//!   seeded per-consumer random streams.
//! - [`traffic`] — aggregated Pareto ON/OFF self-similar sources.
//! - [`pon`] — ONU queues, REPORT/GATE polling, grant sizing and first-fit
//!   wavelength scheduling.
//! - [`rl`] — the tabular SARSA agent driving `W_max`.
//! - [`metrics`] — latency windows, run summaries, CSV serialization.
//! - [`sim`] / [`scenario`] — event wiring, configuration, presets, and the
//!   run/compare entry points.

pub mod engine;
pub mod metrics;
pub mod pon;
pub mod rl;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod traffic;

pub use metrics::{LatencySample, RunSummary, WindowStats};
pub use pon::{Grant, PonConfig};
pub use rl::{AgentConfig, QTable};
pub use rng::RngStream;
pub use scenario::{LoadProfile, ScenarioConfig};
pub use sim::{SimOutput, Simulation};
pub use time::SimTime;
pub use traffic::{OnuTrafficConfig, Packet};
