//! The slow control layer: a tabular SARSA agent that retunes the managed
//! ONU's grant cap once per adjustment interval.
//!
//! State is the ONU's windowed average load discretized into bins, the
//! action is a W_max value from a fixed ladder, and the reward is the
//! shortfall of the interval's latency against the target, clipped to
//! [-5, 1]. Being on-policy, the action used in each temporal-difference
//! update is exactly the action applied to the network for the following
//! interval.

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::time::SimTime;
use crate::traffic::MAX_PACKET_BYTES;

pub const REWARD_MIN: f64 = -5.0;
pub const REWARD_MAX: f64 = 1.0;

/// Which latency statistic of the interval feeds the reward.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardStat {
    #[default]
    Mean,
    /// Nearest-rank percentile, e.g. `p = 99`.
    Percentile { p: u8 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Latency the managed ONU should stay under.
    pub target_latency_ns: SimTime,
    /// Q-table update and W_max adjustment interval.
    pub interval_ns: SimTime,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// Ascending ladder of W_max actions in bytes.
    pub action_set_bytes: Vec<u32>,
    pub n_state_bins: usize,
    #[serde(default)]
    pub reward_stat: RewardStat,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            target_latency_ns: SimTime::from_millis(1),
            interval_ns: SimTime::from_millis(800),
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.3,
            epsilon_decay: 0.99,
            epsilon_min: 0.02,
            // Rounded geometric ladder bracketing the 30000 B default cap.
            action_set_bytes: vec![5_000, 8_000, 12_800, 20_500, 32_800, 52_400, 83_900, 160_000],
            n_state_bins: 11,
            reward_stat: RewardStat::Mean,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.target_latency_ns == SimTime::ZERO {
            return Err("target_latency_ns must be positive".into());
        }
        if self.interval_ns == SimTime::ZERO {
            return Err("interval_ns must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(format!("epsilon_decay {} outside (0, 1]", self.epsilon_decay));
        }
        if !(0.0..=1.0).contains(&self.epsilon_min) {
            return Err(format!("epsilon_min {} outside [0, 1]", self.epsilon_min));
        }
        if self.action_set_bytes.is_empty() {
            return Err("action_set_bytes must not be empty".into());
        }
        if !self.action_set_bytes.windows(2).all(|w| w[0] < w[1]) {
            return Err("action_set_bytes must be strictly increasing".into());
        }
        if self.action_set_bytes[0] < MAX_PACKET_BYTES {
            return Err(format!(
                "smallest action {} B is below the maximum frame size {} B",
                self.action_set_bytes[0], MAX_PACKET_BYTES
            ));
        }
        if self.n_state_bins < 2 {
            return Err("n_state_bins must be at least 2".into());
        }
        if let RewardStat::Percentile { p } = self.reward_stat {
            if p == 0 || p > 100 {
                return Err(format!("reward percentile {p} outside [1, 100]"));
            }
        }
        Ok(())
    }
}

/// What the agent sees about the managed ONU over one interval.
#[derive(Clone, Copy, Debug, Default)]
pub struct Observation {
    /// Bytes arrived over the interval divided by `max_rate * interval`.
    pub avg_load: f64,
    /// Mean upstream latency of packets delivered in the interval.
    pub mean_latency: SimTime,
    /// The configured percentile of the same latencies, when collected.
    pub percentile_latency: Option<SimTime>,
    pub sample_count: u64,
}

/// One SARSA transition: (s, a, r, s', a').
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub next_action: usize,
}

/// Per-tick log row backing `agent_log.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TickRecord {
    pub at: SimTime,
    pub state_bin: usize,
    pub w_max_bytes: u32,
    /// Reward computed at this tick for the previous action (zero on the
    /// first tick, which has nothing to evaluate).
    pub reward: f64,
    /// Exploration probability used for this tick's selection.
    pub epsilon: f64,
}

/// One exported Q-table cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QRecord {
    pub state_bin: usize,
    pub w_max_bytes: u32,
    pub q_value: f64,
    pub visits: u64,
}

/// State x action value matrix with visit counts.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    visits: Vec<u64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        QTable {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
            visits: vec![0; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn value(&self, state: usize, action: usize) -> f64 {
        self.values[self.index(state, action)]
    }

    pub fn visits(&self, state: usize, action: usize) -> u64 {
        self.visits[self.index(state, action)]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    fn index(&self, state: usize, action: usize) -> usize {
        assert!(state < self.n_states && action < self.n_actions);
        state * self.n_actions + action
    }

    /// State-major export, one record per cell.
    pub fn export_records(&self, action_set_bytes: &[u32]) -> Vec<QRecord> {
        assert_eq!(action_set_bytes.len(), self.n_actions);
        let mut records = Vec::with_capacity(self.values.len());
        for state in 0..self.n_states {
            for (action, &w_max_bytes) in action_set_bytes.iter().enumerate() {
                records.push(QRecord {
                    state_bin: state,
                    w_max_bytes,
                    q_value: self.value(state, action),
                    visits: self.visits(state, action),
                });
            }
        }
        records
    }

    /// Rebuilds a table from state-major records (the export inverse).
    pub fn from_records(
        records: &[QRecord],
        n_states: usize,
        action_set_bytes: &[u32],
    ) -> Option<QTable> {
        let n_actions = action_set_bytes.len();
        if records.len() != n_states * n_actions {
            return None;
        }
        let mut table = QTable::new(n_states, n_actions);
        for r in records {
            let action = action_set_bytes.iter().position(|&w| w == r.w_max_bytes)?;
            let idx = table.index(r.state_bin, action);
            table.values[idx] = r.q_value;
            table.visits[idx] = r.visits;
        }
        Some(table)
    }
}

/// Maps an average load into one of `n_bins` states over the nominal
/// range [0, 1); loads at or above 1 (bursts above the mean-rate cap)
/// clamp into the top bin.
pub fn discretize_state(avg_load: f64, n_bins: usize) -> usize {
    assert!(
        avg_load >= 0.0 && avg_load.is_finite(),
        "negative or non-finite load {avg_load}"
    );
    ((avg_load * n_bins as f64).floor() as usize).min(n_bins - 1)
}

/// Linear latency shortfall: 1 at zero latency, 0 at the target, clipped
/// into [-5, 1] beyond it.
pub fn reward_from_latency(latency: SimTime, target: SimTime) -> f64 {
    let r = 1.0 - latency.as_nanos() as f64 / target.as_nanos() as f64;
    r.clamp(REWARD_MIN, REWARD_MAX)
}

/// Reward for an interval observation. An interval that delivered nothing
/// cannot have violated the target and scores the maximum.
pub fn compute_reward(obs: &Observation, target: SimTime, stat: RewardStat) -> f64 {
    if obs.sample_count == 0 {
        return REWARD_MAX;
    }
    let latency = match stat {
        RewardStat::Mean => obs.mean_latency,
        RewardStat::Percentile { .. } => obs
            .percentile_latency
            .expect("percentile reward configured but percentile not collected"),
    };
    reward_from_latency(latency, target)
}

/// Epsilon-greedy selection; greedy ties break toward the lowest index
/// (the smallest W_max — the least bandwidth-hungry choice).
///
/// The exploration coin is drawn on every call so the stream advances
/// uniformly regardless of epsilon.
pub fn select_action(q_row: &[f64], epsilon: f64, rng: &mut RngStream) -> usize {
    debug_assert!(!q_row.is_empty());
    debug_assert!(q_row.iter().all(|v| v.is_finite()));
    let coin = rng.unit();
    if coin < epsilon {
        return rng.index(q_row.len());
    }
    let mut best = 0;
    for (i, &v) in q_row.iter().enumerate().skip(1) {
        if v > q_row[best] {
            best = i;
        }
    }
    best
}

/// One SARSA temporal-difference update:
/// `Q(s,a) += alpha * (r + gamma * Q(s',a') - Q(s,a))`.
///
/// Exactly one cell changes; its visit count increments. Returns the new
/// `Q(s,a)`.
pub fn sarsa_update(q: &mut QTable, step: &AgentStep, alpha: f64, gamma: f64) -> f64 {
    assert!(
        step.reward.is_finite() && alpha.is_finite() && gamma.is_finite(),
        "non-finite SARSA inputs"
    );
    let next_q = q.value(step.next_state, step.next_action);
    let idx = q.index(step.state, step.action);
    let current = q.values[idx];
    let updated = current + alpha * (step.reward + gamma * next_q - current);
    assert!(updated.is_finite());
    q.values[idx] = updated;
    q.visits[idx] += 1;
    updated
}

/// The agent: Q-table, exploration schedule, and transition log.
#[derive(Clone, Debug)]
pub struct SarsaAgent {
    cfg: AgentConfig,
    q: QTable,
    epsilon: f64,
    prev: Option<(usize, usize)>,
    steps: Vec<AgentStep>,
    ticks: Vec<TickRecord>,
}

impl SarsaAgent {
    pub fn new(cfg: AgentConfig) -> Self {
        let q = QTable::new(cfg.n_state_bins, cfg.action_set_bytes.len());
        let epsilon = cfg.epsilon;
        SarsaAgent {
            cfg,
            q,
            epsilon,
            prev: None,
            steps: Vec::new(),
            ticks: Vec::new(),
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn q_table(&self) -> &QTable {
        &self.q
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn steps(&self) -> &[AgentStep] {
        &self.steps
    }

    pub fn ticks(&self) -> &[TickRecord] {
        &self.ticks
    }

    /// One adjustment-interval tick: score the previous action with this
    /// interval's observation, pick the next action on-policy, update the
    /// table, decay epsilon, and return the W_max to apply.
    ///
    /// The first tick has nothing to score: it only selects and applies.
    pub fn tick(&mut self, now: SimTime, obs: &Observation, rng: &mut RngStream) -> u32 {
        let next_state = discretize_state(obs.avg_load, self.cfg.n_state_bins);
        let selection_epsilon = self.epsilon;
        let next_action = select_action(self.q.row(next_state), selection_epsilon, rng);
        let reward = match self.prev {
            Some((state, action)) => {
                let reward =
                    compute_reward(obs, self.cfg.target_latency_ns, self.cfg.reward_stat);
                let step = AgentStep {
                    state,
                    action,
                    reward,
                    next_state,
                    next_action,
                };
                sarsa_update(&mut self.q, &step, self.cfg.alpha, self.cfg.gamma);
                self.steps.push(step);
                reward
            }
            None => 0.0,
        };
        self.epsilon = (self.epsilon * self.cfg.epsilon_decay).max(self.cfg.epsilon_min);
        self.prev = Some((next_state, next_action));
        let w_max = self.cfg.action_set_bytes[next_action];
        self.ticks.push(TickRecord {
            at: now,
            state_bin: next_state,
            w_max_bytes: w_max,
            reward,
            epsilon: selection_epsilon,
        });
        w_max
    }
}
