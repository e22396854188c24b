//! Scenario configuration and the experiment runner: parses and validates
//! the TOML scenario file, builds the simulation, writes the output CSVs,
//! and compares finished runs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    self, read_summary, read_timeseries, MetricsError, OnuSummary, AGENT_LOG_FILE, QTABLE_FILE,
    SUMMARY_FILE, TIMESERIES_FILE,
};
use crate::rl::AgentConfig;
use crate::pon::PonConfig;
use crate::sim::{SimOutput, SimParams, Simulation};
use crate::time::SimTime;
use crate::traffic::{calibrate_min_off_ns, OnuTrafficConfig};

/// File the resolved configuration is written to alongside the CSVs.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("cannot write outputs: {0}")]
    Output(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("comparison needs at least one run directory")]
    EmptyComparison,
    #[error("runs use different metric windows: {0:?} ns")]
    WindowMismatch(Vec<u64>),
}

/// Offered load over time, as a fraction of each ONU's maximum rate.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadProfile {
    Fixed { load: f64 },
    Dynamic { points: Vec<ProfilePoint> },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProfilePoint {
    pub t_ns: u64,
    pub load: f64,
}

impl LoadProfile {
    /// Load at `t`: constant for `Fixed`; piecewise-linear between the
    /// breakpoints of `Dynamic`, clamped to the end values outside them.
    pub fn load_at(&self, t: SimTime) -> f64 {
        match self {
            LoadProfile::Fixed { load } => *load,
            LoadProfile::Dynamic { points } => {
                debug_assert!(!points.is_empty());
                let t = t.as_nanos();
                if t <= points[0].t_ns {
                    return points[0].load;
                }
                if let Some(last) = points.last() {
                    if t >= last.t_ns {
                        return last.load;
                    }
                }
                for pair in points.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    if t >= a.t_ns && t < b.t_ns {
                        let span = (b.t_ns - a.t_ns) as f64;
                        let frac = (t - a.t_ns) as f64 / span;
                        return a.load + (b.load - a.load) * frac;
                    }
                }
                points.last().expect("non-empty").load
            }
        }
    }

    /// The highest load the profile can ever demand.
    pub fn max_load(&self) -> f64 {
        match self {
            LoadProfile::Fixed { load } => *load,
            LoadProfile::Dynamic { points } => {
                points.iter().map(|p| p.load).fold(0.0, f64::max)
            }
        }
    }

    fn validate(&self, errors: &mut Vec<String>) {
        match self {
            LoadProfile::Fixed { load } => {
                if !(load.is_finite() && *load >= 0.0) {
                    errors.push(format!("fixed load {load} must be finite and >= 0"));
                }
            }
            LoadProfile::Dynamic { points } => {
                if points.is_empty() {
                    errors.push("dynamic profile needs at least one breakpoint".into());
                }
                for p in points {
                    if !(p.load.is_finite() && p.load >= 0.0) {
                        errors.push(format!("profile load {} must be finite and >= 0", p.load));
                    }
                }
                if !points.windows(2).all(|w| w[0].t_ns < w[1].t_ns) {
                    errors.push("dynamic profile breakpoints must be strictly time-ordered".into());
                }
            }
        }
    }
}

/// Guard-interval budget: the burst-mode dead-time contributors.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct GuardBudget {
    /// Transmitter laser fall time.
    pub laser_off_ns: u64,
    /// Transmitter laser rise time.
    pub laser_on_ns: u64,
    /// Burst-mode receiver gain settling time.
    pub tia_settle_ns: u64,
    /// Burst clock-and-data-recovery lock time.
    pub cdr_lock_ns: u64,
    /// Engineering margin on top of the measured components.
    pub margin_ns: u64,
}

impl GuardBudget {
    pub fn total_ns(&self) -> u64 {
        self.laser_off_ns + self.laser_on_ns + self.tia_settle_ns + self.cdr_lock_ns
            + self.margin_ns
    }
}

/// Outcome of checking a guard budget against the configured guard time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GuardVerdict {
    pub total_ns: u64,
    pub guard_ns: u64,
    pub safe: bool,
}

impl fmt::Display for GuardVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total {} ns vs guard {} ns: {}",
            self.total_ns,
            self.guard_ns,
            if self.safe { "SAFE" } else { "UNSAFE" }
        )
    }
}

/// Sums the dead-time components and checks they fit inside the guard.
pub fn guard_budget(budget: &GuardBudget, guard: SimTime) -> GuardVerdict {
    let total_ns = budget.total_ns();
    GuardVerdict {
        total_ns,
        guard_ns: guard.as_nanos(),
        safe: total_ns <= guard.as_nanos(),
    }
}

/// Per-ONU scaling of the profile load.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrafficOverride {
    pub onu_id: usize,
    pub load_scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub enabled: bool,
    /// The ONU whose latency the agent manages.
    pub managed_onu: usize,
    #[serde(default)]
    pub params: AgentConfig,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            enabled: true,
            managed_onu: 2,
            params: AgentConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Width of the latency time-series windows.
    pub window_ns: SimTime,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            window_ns: SimTime::from_millis(100),
        }
    }
}

/// One full experiment description.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_ns: SimTime,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub pon: PonConfig,
    #[serde(default)]
    pub traffic: OnuTrafficConfig,
    #[serde(default)]
    pub traffic_overrides: Vec<TrafficOverride>,
    #[serde(default)]
    pub agent: AgentSection,
    pub load: LoadProfile,
    #[serde(default)]
    pub metrics: MetricsSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/scenario")
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|source| ScenarioError::Parse {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    /// Validates every cross-module invariant, reporting all problems at
    /// once. Nothing is simulated if this fails.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errors = Vec::new();
        if self.duration_ns == SimTime::ZERO {
            errors.push("duration_ns must be positive".into());
        }
        if let Err(e) = self.pon.validate() {
            errors.push(format!("pon: {e}"));
        }
        // Structural traffic validation with a harmless load.
        let mut base = self.traffic.clone();
        base.load = 0.0;
        if let Err(e) = base.validate() {
            errors.push(format!("traffic: {e}"));
        }
        self.load.validate(&mut errors);

        let mut seen = std::collections::BTreeSet::new();
        for o in &self.traffic_overrides {
            if o.onu_id >= self.pon.n_onus {
                errors.push(format!(
                    "traffic override for ONU {} out of range (n_onus {})",
                    o.onu_id, self.pon.n_onus
                ));
            }
            if !(o.load_scale.is_finite() && o.load_scale >= 0.0) {
                errors.push(format!("load_scale {} must be finite and >= 0", o.load_scale));
            }
            if !seen.insert(o.onu_id) {
                errors.push(format!("duplicate traffic override for ONU {}", o.onu_id));
            }
        }

        // Every load the profile can demand must be reachable by the
        // calibrated generators, for every scaled ONU.
        let max_scale = self
            .traffic_overrides
            .iter()
            .map(|o| o.load_scale)
            .fold(1.0, f64::max);
        let peak_load = self.load.max_load() * max_scale;
        if peak_load > 0.0 && !errors.iter().any(|e| e.starts_with("traffic:")) {
            if let Err(e) = calibrate_min_off_ns(&self.traffic, peak_load) {
                errors.push(format!("traffic: {e}"));
            }
        }

        if self.agent.enabled {
            if let Err(e) = self.agent.params.validate() {
                errors.push(format!("agent: {e}"));
            }
            if self.agent.managed_onu >= self.pon.n_onus {
                errors.push(format!(
                    "managed_onu {} out of range (n_onus {})",
                    self.agent.managed_onu, self.pon.n_onus
                ));
            }
        }
        if self.metrics.window_ns == SimTime::ZERO {
            errors.push("metrics.window_ns must be positive".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(errors))
        }
    }

    fn load_scale(&self, onu: usize) -> f64 {
        self.traffic_overrides
            .iter()
            .find(|o| o.onu_id == onu)
            .map(|o| o.load_scale)
            .unwrap_or(1.0)
    }

    /// Resolves the config into buildable simulation parameters.
    pub fn sim_params(&self, trace_grants: bool) -> SimParams {
        let initial_load = self.load.load_at(SimTime::ZERO);
        let traffic: Vec<OnuTrafficConfig> = (0..self.pon.n_onus)
            .map(|onu| {
                let mut cfg = self.traffic.clone();
                cfg.load = initial_load * self.load_scale(onu);
                cfg
            })
            .collect();
        let load_scales = (0..self.pon.n_onus).map(|o| self.load_scale(o)).collect();
        SimParams {
            pon: self.pon.clone(),
            traffic,
            agent: self.agent.enabled.then(|| self.agent.params.clone()),
            managed_onu: self.agent.managed_onu,
            profile: self.load.clone(),
            load_scales,
            seed: self.seed,
            duration: self.duration_ns,
            window: self.metrics.window_ns,
            trace_grants,
        }
    }
}

/// Named ready-to-run configurations.
pub const PRESET_NAMES: &[&str] = &["desk", "desk-diurnal", "full-scale"];

/// Synthetic diurnal shape: one load value per hour of a day, compressed
/// onto whatever run duration the scenario uses.
const DIURNAL_LOADS: [f64; 24] = [
    0.16, 0.13, 0.11, 0.10, 0.10, 0.12, 0.18, 0.28, 0.40, 0.48, 0.52, 0.55, 0.58, 0.56, 0.54,
    0.55, 0.60, 0.70, 0.82, 0.90, 0.85, 0.70, 0.45, 0.25,
];

/// Builds a named preset, or `None` for an unknown name.
///
/// - `desk`: 20 s fixed-0.7 run with a 50 ms agent interval, so the agent
///   sees hundreds of ticks within minutes of wall time.
/// - `desk-diurnal`: same scale, with the synthetic diurnal profile.
/// - `full-scale`: the 0.8 s adjustment interval at fixed load 1.0.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let desk_agent = AgentSection {
        enabled: true,
        managed_onu: 2,
        params: AgentConfig {
            interval_ns: SimTime::from_millis(50),
            // A 400-tick run cannot populate the default 11-bin state
            // space before the load regime moves on; four bins keep every
            // active row visited often enough to learn within seconds.
            n_state_bins: 4,
            ..AgentConfig::default()
        },
    };
    match name {
        "desk" => Some(ScenarioConfig {
            seed: 1,
            duration_ns: SimTime::from_secs(20),
            output_dir: PathBuf::from("runs/desk"),
            pon: PonConfig::default(),
            traffic: OnuTrafficConfig::default(),
            traffic_overrides: Vec::new(),
            agent: desk_agent,
            load: LoadProfile::Fixed { load: 0.7 },
            metrics: MetricsSection::default(),
        }),
        "desk-diurnal" => {
            let duration = SimTime::from_secs(20);
            Some(ScenarioConfig {
                seed: 1,
                duration_ns: duration,
                output_dir: PathBuf::from("runs/desk-diurnal"),
                pon: PonConfig::default(),
                traffic: OnuTrafficConfig::default(),
                traffic_overrides: Vec::new(),
                agent: desk_agent,
                load: diurnal_profile(duration),
                metrics: MetricsSection::default(),
            })
        }
        "full-scale" => Some(ScenarioConfig {
            seed: 1,
            duration_ns: SimTime::from_secs(60),
            output_dir: PathBuf::from("runs/full-scale"),
            pon: PonConfig::default(),
            traffic: OnuTrafficConfig::default(),
            traffic_overrides: Vec::new(),
            agent: AgentSection::default(),
            load: LoadProfile::Fixed { load: 1.0 },
            metrics: MetricsSection::default(),
        }),
        _ => None,
    }
}

/// The 24-point diurnal trend stretched over `duration`.
pub fn diurnal_profile(duration: SimTime) -> LoadProfile {
    let span = duration.as_nanos();
    let points = DIURNAL_LOADS
        .iter()
        .enumerate()
        .map(|(hour, &load)| ProfilePoint {
            t_ns: span * hour as u64 / (DIURNAL_LOADS.len() as u64 - 1),
            load,
        })
        .collect();
    LoadProfile::Dynamic { points }
}

/// A finished run: where it was written and everything it produced.
#[derive(Debug)]
pub struct RunResult {
    pub dir: PathBuf,
    pub output: SimOutput,
    pub managed_onu: usize,
    pub target_latency: SimTime,
    pub agent_enabled: bool,
}

impl RunResult {
    /// Mean latency of the managed ONU over the whole run.
    pub fn managed_mean_latency(&self) -> SimTime {
        self.output.summary.per_onu[self.managed_onu].mean_latency
    }
}

/// Validates, simulates, and writes the four CSVs plus the resolved config.
///
/// On any output failure a directory this call created is removed again.
pub fn run_scenario(cfg: &ScenarioConfig, trace_grants: bool) -> Result<RunResult, ScenarioError> {
    cfg.validate()?;
    let output = Simulation::new(cfg.sim_params(trace_grants)).run();

    let dir = &cfg.output_dir;
    let created_fresh = !dir.exists();
    fs::create_dir_all(dir).map_err(|source| ScenarioError::Write {
        path: dir.clone(),
        source,
    })?;
    let write_all = || -> Result<(), ScenarioError> {
        metrics::write_timeseries(&dir.join(TIMESERIES_FILE), &output.window_rows)?;
        metrics::write_agent_log(&dir.join(AGENT_LOG_FILE), &output.agent_ticks)?;
        metrics::write_qtable(&dir.join(QTABLE_FILE), &output.qtable_records)?;
        metrics::write_summary(&dir.join(SUMMARY_FILE), &output.summary)?;
        let rendered = toml::to_string_pretty(cfg).expect("config serializes");
        fs::write(dir.join(CONFIG_FILE), rendered).map_err(|source| ScenarioError::Write {
            path: dir.join(CONFIG_FILE),
            source,
        })?;
        Ok(())
    };
    if let Err(e) = write_all() {
        if created_fresh {
            let _ = fs::remove_dir_all(dir);
        }
        return Err(e);
    }
    Ok(RunResult {
        dir: dir.clone(),
        output,
        managed_onu: cfg.agent.managed_onu,
        target_latency: cfg.agent.params.target_latency_ns,
        agent_enabled: cfg.agent.enabled,
    })
}

/// One run's line in a comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct RunComparison {
    pub dir: PathBuf,
    pub managed_onu: u32,
    pub target_latency: SimTime,
    pub mean_latency: SimTime,
    pub p99_latency: SimTime,
    pub max_latency: SimTime,
    /// Fraction of time windows whose mean latency met the target.
    pub fraction_under_target: f64,
}

/// Reads finished run directories and aligns their managed-ONU figures.
/// All runs must share the metrics window length.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Vec<RunComparison>, ScenarioError> {
    if dirs.is_empty() {
        return Err(ScenarioError::EmptyComparison);
    }
    let mut rows = Vec::with_capacity(dirs.len());
    let mut windows = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let cfg = ScenarioConfig::load(&dir.join(CONFIG_FILE))?;
        windows.push(cfg.metrics.window_ns.as_nanos());
        let managed = cfg.agent.managed_onu as u32;
        let target = cfg.agent.params.target_latency_ns;
        let summaries: Vec<OnuSummary> = read_summary(&dir.join(SUMMARY_FILE))?;
        let summary = summaries
            .into_iter()
            .find(|s| s.onu_id == managed)
            .unwrap_or(OnuSummary {
                onu_id: managed,
                packets: 0,
                mean_latency: SimTime::ZERO,
                p99_latency: SimTime::ZERO,
                max_latency: SimTime::ZERO,
                throughput_bps: 0,
            });
        let ts = read_timeseries(&dir.join(TIMESERIES_FILE))?;
        let managed_rows: Vec<_> = ts.iter().filter(|r| r.onu_id == managed).collect();
        let under = managed_rows
            .iter()
            .filter(|r| r.mean_latency <= target)
            .count();
        let fraction_under_target = if managed_rows.is_empty() {
            0.0
        } else {
            under as f64 / managed_rows.len() as f64
        };
        rows.push(RunComparison {
            dir: dir.clone(),
            managed_onu: managed,
            target_latency: target,
            mean_latency: summary.mean_latency,
            p99_latency: summary.p99_latency,
            max_latency: summary.max_latency,
            fraction_under_target,
        });
    }
    windows.dedup();
    if windows.len() > 1 {
        return Err(ScenarioError::WindowMismatch(windows));
    }
    Ok(rows)
}

/// Renders comparison rows as an aligned text table.
pub fn render_comparison(rows: &[RunComparison]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<40} {:>6} {:>14} {:>14} {:>14} {:>14} {:>10}\n",
        "run", "onu", "target_us", "mean_us", "p99_us", "max_us", "under"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<40} {:>6} {:>14.1} {:>14.1} {:>14.1} {:>14.1} {:>9.1}%\n",
            r.dir.display(),
            r.managed_onu,
            r.target_latency.as_nanos() as f64 / 1_000.0,
            r.mean_latency.as_nanos() as f64 / 1_000.0,
            r.p99_latency.as_nanos() as f64 / 1_000.0,
            r.max_latency.as_nanos() as f64 / 1_000.0,
            r.fraction_under_target * 100.0
        ));
    }
    out
}
