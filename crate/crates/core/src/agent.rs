//! Tabular Q-learning over bandwidth states and shaped-rate actions.
//!
//! The environment is exogenous: the next capacity does not depend on the
//! chosen rate, so the optimal policy is the per-state reward argmax. That
//! makes [`oracle_policy`] an exact ground truth for the learned table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sim_rng;

const LEVEL_EPS: f64 = 1e-9;

/// Ordered bandwidth levels the decision engine distinguishes, in Kbps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub levels: Vec<f64>,
    /// Grid on which new levels are placed.
    pub step: f64,
}

impl Default for StateSpace {
    fn default() -> Self {
        Self {
            levels: (3..=10).map(|k| k as f64 * 50.0).collect(),
            step: 50.0,
        }
    }
}

impl StateSpace {
    pub fn new(levels: Vec<f64>, step: f64) -> Result<Self> {
        let s = Self { levels, step };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::param("state space needs at least one level"));
        }
        strictly_increasing_positive(&self.levels, "state levels")?;
        if !(self.step > 0.0) {
            return Err(Error::param("state quantization step must be > 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index_of(&self, level: f64) -> Option<usize> {
        self.levels.iter().position(|l| (l - level).abs() < LEVEL_EPS)
    }

    /// Inserts `level` keeping the order; returns its index and whether it
    /// was newly added.
    pub fn insert(&mut self, level: f64) -> (usize, bool) {
        if let Some(i) = self.index_of(level) {
            return (i, false);
        }
        let i = self.levels.partition_point(|&l| l < level);
        self.levels.insert(i, level);
        (i, true)
    }

    /// Snaps a bandwidth to the quantization grid (ties toward the lower
    /// level, never below one step).
    pub fn grid_level(&self, kbps: f64) -> f64 {
        let k = (kbps / self.step - 0.5).ceil().max(1.0);
        k * self.step
    }
}

/// Shaped-rate levels in Kbps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub rates: Vec<f64>,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self {
            rates: (1..=60).map(|k| k as f64 * 10.0).collect(),
        }
    }
}

impl ActionSpace {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        let s = Self { rates };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() {
            return Err(Error::param("action space needs at least one rate"));
        }
        strictly_increasing_positive(&self.rates, "action rates")
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn index_of(&self, rate: f64) -> Option<usize> {
        self.rates.iter().position(|r| (r - rate).abs() < LEVEL_EPS)
    }

    pub fn max_rate(&self) -> f64 {
        *self.rates.last().unwrap()
    }

    /// Spacing between the two smallest rates.
    pub fn granularity(&self) -> f64 {
        if self.rates.len() < 2 {
            self.rates[0]
        } else {
            self.rates[1] - self.rates[0]
        }
    }
}

fn strictly_increasing_positive(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::param(format!("{what} must all be > 0")));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Weight on rate above capacity; under-use has weight 1.
    pub overshoot_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            overshoot_penalty: 2.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.overshoot_penalty >= 1.0) {
            return Err(Error::param("overshoot_penalty must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub episodes: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            episodes: 500,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha must lie in (0, 1]"));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::param("gamma must lie in [0, 1)"));
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::param("epsilon must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` on the first episode to
    /// `epsilon_end` on the last.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_end;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    /// `values[state][action]`
    pub values: Vec<Vec<f64>>,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl QTable {
    pub fn zeros(states: usize, actions: usize, cfg: &AgentConfig) -> Self {
        Self {
            values: vec![vec![0.0; actions]; states],
            alpha: cfg.alpha,
            gamma: cfg.gamma,
            epsilon: cfg.epsilon_start,
        }
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn n_actions(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s]
    }

    /// Inserts a zero row at `index` (mirrors [`StateSpace::insert`]).
    pub fn insert_row(&mut self, index: usize) {
        let m = self.n_actions();
        self.values.insert(index, vec![0.0; m]);
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.n_states() {
            return Err(Error::Index {
                index: s,
                len: self.n_states(),
            });
        }
        if a >= self.n_actions() {
            return Err(Error::Index {
                index: a,
                len: self.n_actions(),
            });
        }
        Ok(())
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax_low(&self.values[s])
    }

    pub fn to_csv(&self, states: &StateSpace, actions: &ActionSpace) -> Result<String> {
        if states.len() != self.n_states() || actions.len() != self.n_actions() {
            return Err(Error::param("q-table dimensions do not match the spaces"));
        }
        let mut out = String::from("state\\action");
        for r in &actions.rates {
            let _ = write!(out, ",{r}");
        }
        out.push('\n');
        for (level, row) in states.levels.iter().zip(&self.values) {
            let _ = write!(out, "{level}");
            for q in row {
                let _ = write!(out, ",{q}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_csv(text: &str, cfg: &AgentConfig) -> Result<(QTable, StateSpace, ActionSpace)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::param("q-table csv is empty"))?;
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::param(format!("q-table csv: `{s}`: {e}")))
        };
        let rates = header
            .split(',')
            .skip(1)
            .map(parse)
            .collect::<Result<Vec<_>>>()?;
        let mut levels = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let mut cells = line.split(',');
            levels.push(parse(cells.next().unwrap_or(""))?);
            let row = cells.map(parse).collect::<Result<Vec<_>>>()?;
            if row.len() != rates.len() {
                return Err(Error::param("q-table csv: ragged row"));
            }
            values.push(row);
        }
        let step = StateSpace::default().step;
        let states = StateSpace::new(levels, step)?;
        let actions = ActionSpace::new(rates)?;
        let q = QTable {
            values,
            alpha: cfg.alpha,
            gamma: cfg.gamma,
            epsilon: cfg.epsilon_end,
        };
        Ok((q, states, actions))
    }

    pub fn save_csv(&self, path: &Path, states: &StateSpace, actions: &ActionSpace) -> Result<()> {
        fs::write(path, self.to_csv(states, actions)?).map_err(|e| Error::io(path, e))
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax_low(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Nearest level; equidistant bandwidths map to the lower level. Values
/// outside the range clamp to the first or last level.
pub fn quantize_state(bandwidth: f64, space: &StateSpace) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, l) in space.levels.iter().enumerate() {
        let d = (bandwidth - l).abs();
        if d < best_d - LEVEL_EPS {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Zero at a perfect match, linear loss for under-use, weighted loss for
/// overshoot.
pub fn reward(action_rate: f64, capacity: f64, params: &RewardParams) -> f64 {
    if action_rate <= capacity {
        -(capacity - action_rate)
    } else {
        -params.overshoot_penalty * (action_rate - capacity)
    }
}

/// One-step Q-learning update toward `r + gamma * max_a' Q(s_next, a')`.
pub fn q_update(q: &mut QTable, s: usize, a: usize, r: f64, s_next: usize) -> Result<()> {
    q.check(s, a)?;
    q.check(s_next, 0)?;
    let best_next = q.values[s_next]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let target = r + q.gamma * best_next;
    let cur = q.values[s][a];
    q.values[s][a] = cur + q.alpha * (target - cur);
    Ok(())
}

/// Greedy argmax (lowest index on ties) or epsilon-greedy with uniform
/// exploration.
pub fn select_action<R: Rng + ?Sized>(q: &QTable, s: usize, rng: &mut R, greedy: bool) -> usize {
    if !greedy && rng.gen::<f64>() < q.epsilon {
        return rng.gen_range(0..q.n_actions());
    }
    q.greedy(s)
}

/// Trains a fresh table on a per-step capacity trace.
pub fn train_agent(
    capacities: &[f64],
    reward_params: &RewardParams,
    states: &StateSpace,
    actions: &ActionSpace,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<QTable> {
    let q = QTable::zeros(states.len(), actions.len(), cfg);
    train_agent_from(q, capacities, reward_params, states, actions, cfg, seed)
}

/// Continues training an existing table. One episode is one pass over the
/// trace; epsilon decays linearly across episodes.
pub fn train_agent_from(
    mut q: QTable,
    capacities: &[f64],
    reward_params: &RewardParams,
    states: &StateSpace,
    actions: &ActionSpace,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<QTable> {
    cfg.validate()?;
    reward_params.validate()?;
    if capacities.is_empty() {
        return Err(Error::InsufficientData("empty capacity schedule".into()));
    }
    if q.n_states() != states.len() || q.n_actions() != actions.len() {
        return Err(Error::param("q-table dimensions do not match the spaces"));
    }
    q.alpha = cfg.alpha;
    q.gamma = cfg.gamma;
    let mut rng = sim_rng(seed);
    let trace: Vec<usize> = capacities.iter().map(|&c| quantize_state(c, states)).collect();
    for episode in 0..cfg.episodes {
        q.epsilon = cfg.epsilon_at(episode);
        for t in 0..trace.len() {
            let s = trace[t];
            let a = select_action(&q, s, &mut rng, false);
            let r = reward(actions.rates[a], capacities[t], reward_params);
            let s_next = trace.get(t + 1).copied().unwrap_or(s);
            q_update(&mut q, s, a, r, s_next)?;
        }
    }
    q.epsilon = cfg.epsilon_end;
    Ok(q)
}

/// Exhaustive per-state argmax of the reward, treating each level as the
/// link capacity.
pub fn oracle_policy(states: &StateSpace, actions: &ActionSpace, params: &RewardParams) -> Vec<usize> {
    states
        .levels
        .iter()
        .map(|&cap| oracle_action(cap, actions, params))
        .collect()
}

pub fn oracle_action(capacity: f64, actions: &ActionSpace, params: &RewardParams) -> usize {
    let rewards: Vec<f64> = actions
        .rates
        .iter()
        .map(|&a| reward(a, capacity, params))
        .collect();
    argmax_low(&rewards)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AgentConfig {
        AgentConfig::default()
    }

    #[test]
    fn quantize_exact_tie_and_clamp() {
        let s = StateSpace::default();
        assert_eq!(s.levels[quantize_state(300.0, &s)], 300.0);
        assert_eq!(s.levels[quantize_state(275.0, &s)], 250.0);
        assert_eq!(quantize_state(10_000.0, &s), s.len() - 1);
        assert_eq!(quantize_state(0.0, &s), 0);
    }

    #[test]
    fn grid_level_ties_low() {
        let s = StateSpace::default();
        assert_eq!(s.grid_level(52.0), 50.0);
        assert_eq!(s.grid_level(75.0), 50.0);
        assert_eq!(s.grid_level(76.0), 100.0);
        assert_eq!(s.grid_level(3.0), 50.0);
    }

    #[test]
    fn reward_branches() {
        let p = RewardParams::default();
        assert_eq!(reward(250.0, 250.0, &p), 0.0);
        assert_eq!(reward(240.0, 250.0, &p), -10.0);
        assert_eq!(reward(260.0, 250.0, &p), -20.0);
    }

    #[test]
    fn q_update_arithmetic() {
        let c = AgentConfig { alpha: 0.5, gamma: 0.9, ..cfg() };
        let mut q = QTable::zeros(2, 2, &c);
        q_update(&mut q, 0, 1, 1.0, 1).unwrap();
        assert_eq!(q.values[0][1], 0.5);

        let mut q = QTable::zeros(2, 2, &AgentConfig { alpha: 0.5, gamma: 0.0, ..cfg() });
        q.values[0][0] = 4.0;
        q_update(&mut q, 0, 0, 0.0, 1).unwrap();
        assert_eq!(q.values[0][0], 2.0);
    }

    #[test]
    fn q_update_zero_alpha_is_noop() {
        let mut q = QTable::zeros(2, 2, &cfg());
        q.alpha = 0.0;
        q.values[0][0] = 3.0;
        let before = q.clone();
        q_update(&mut q, 0, 0, 7.0, 1).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn q_update_rejects_bad_index() {
        let mut q = QTable::zeros(2, 2, &cfg());
        assert!(matches!(q_update(&mut q, 2, 0, 0.0, 0), Err(Error::Index { .. })));
        assert!(matches!(q_update(&mut q, 0, 5, 0.0, 0), Err(Error::Index { .. })));
        assert!(matches!(q_update(&mut q, 0, 0, 0.0, 9), Err(Error::Index { .. })));
    }

    #[test]
    fn greedy_unique_and_tie() {
        let mut q = QTable::zeros(1, 4, &cfg());
        q.values[0] = vec![-1.0, 3.0, -2.0, 0.0];
        let mut rng = sim_rng(0);
        assert_eq!(select_action(&q, 0, &mut rng, true), 1);
        q.values[0] = vec![-1.0, 3.0, 3.0, 0.0];
        assert_eq!(select_action(&q, 0, &mut rng, true), 1);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let m = 10;
        let mut q = QTable::zeros(1, m, &cfg());
        q.epsilon = 1.0;
        q.values[0][3] = 100.0;
        let mut rng = sim_rng(99);
        let n = 10_000;
        let mut counts = vec![0usize; m];
        for _ in 0..n {
            counts[select_action(&q, 0, &mut rng, false)] += 1;
        }
        let e = n as f64 / m as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // chi-square critical value, 9 dof, p = 0.001
        assert!(chi2 < 27.88, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn zero_episodes_leaves_zero_table() {
        let s = StateSpace::default();
        let a = ActionSpace::default();
        let c = AgentConfig { episodes: 0, ..cfg() };
        let q = train_agent(&[150.0, 200.0], &RewardParams::default(), &s, &a, &c, 1).unwrap();
        assert!(q.values.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_schedule_rejected() {
        let s = StateSpace::default();
        let a = ActionSpace::default();
        assert!(train_agent(&[], &RewardParams::default(), &s, &a, &cfg(), 1).is_err());
    }

    #[test]
    fn oracle_examples() {
        let actions = ActionSpace::default();
        let p2 = RewardParams { overshoot_penalty: 2.0 };
        let p1 = RewardParams { overshoot_penalty: 1.0 };
        assert_eq!(actions.rates[oracle_action(250.0, &actions, &p2)], 250.0);
        assert_eq!(actions.rates[oracle_action(255.0, &actions, &p2)], 250.0);
        assert_eq!(actions.rates[oracle_action(255.0, &actions, &p1)], 250.0);
    }

    #[test]
    fn state_insert_keeps_order() {
        let mut s = StateSpace::default();
        assert_eq!(s.insert(100.0), (0, true));
        assert_eq!(s.insert(50.0), (0, true));
        assert_eq!(s.insert(300.0), (5, false));
        assert_eq!(s.levels[..3], [50.0, 100.0, 150.0]);
    }

    #[test]
    fn csv_roundtrip() {
        let s = StateSpace::new(vec![100.0, 200.0], 50.0).unwrap();
        let a = ActionSpace::new(vec![10.0, 20.0, 30.0]).unwrap();
        let mut q = QTable::zeros(2, 3, &cfg());
        q.values[1][2] = -1.25;
        let text = q.to_csv(&s, &a).unwrap();
        assert!(text.starts_with("state\\action,10,20,30\n"));
        let (back, s2, a2) = QTable::from_csv(&text, &cfg()).unwrap();
        assert_eq!(back.values, q.values);
        assert_eq!((s2.levels, a2.rates), (s.levels, a.rates));
    }
}
