//! Digital twin of the managed link.
//!
//! The twin mirrors observed capacity telemetry, predicts the next state,
//! resolves a shaping action and learns from the outcome. New bandwidth
//! levels get a conservative first-occurrence action while the twin works
//! out the optimal one in an isolated simulation; later occurrences reuse it.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{
    quantize_state, train_agent, ActionSpace, AgentConfig, QTable, RewardParams, StateSpace,
};
use crate::error::{Error, Result};
use crate::netsim::{self, LinkModel, ShaperConfig, VariationSchedule};
use crate::predictor::PredictorBundle;

const LEVEL_EPS: f64 = 1e-9;

/// Map key for a bandwidth level (milli-Kbps resolution).
fn level_key(kbps: f64) -> i64 {
    (kbps * 1000.0).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Learned from the training schedule before deployment.
    Known,
    /// Precomputed by an explicit what-if simulation.
    WhatIf,
    /// Learned in the background after a suboptimal first encounter.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbEntry {
    pub state_kbps: f64,
    pub action_kbps: f64,
    pub origin: Origin,
    pub occurrences: u32,
}

/// State → action map maintained by the twin.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionDatabase {
    /// Sorted by `state_kbps`.
    pub entries: Vec<DbEntry>,
}

impl ActionDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn position(&self, state_kbps: f64) -> std::result::Result<usize, usize> {
        let key = level_key(state_kbps);
        self.entries
            .binary_search_by_key(&key, |e| level_key(e.state_kbps))
    }

    pub fn get(&self, state_kbps: f64) -> Option<&DbEntry> {
        self.position(state_kbps).ok().map(|i| &self.entries[i])
    }

    /// Writes one entry atomically. A learned (what-if/adaptive) entry is never
    /// downgraded back to `known`; every merge counts as an occurrence.
    pub fn merge(&mut self, state_kbps: f64, action_kbps: f64, origin: Origin) -> &DbEntry {
        match self.position(state_kbps) {
            Ok(i) => {
                let e = &mut self.entries[i];
                e.occurrences = e.occurrences.saturating_add(1);
                if !(origin == Origin::Known && e.origin != Origin::Known) {
                    e.action_kbps = action_kbps;
                    e.origin = origin;
                }
                &self.entries[i]
            }
            Err(i) => {
                self.entries.insert(
                    i,
                    DbEntry {
                        state_kbps,
                        action_kbps,
                        origin,
                        occurrences: 1,
                    },
                );
                &self.entries[i]
            }
        }
    }

    /// Increments the occurrence count of an existing entry.
    pub fn bump(&mut self, state_kbps: f64) -> Option<&DbEntry> {
        let i = self.position(state_kbps).ok()?;
        let e = &mut self.entries[i];
        e.occurrences = e.occurrences.saturating_add(1);
        Some(&self.entries[i])
    }

    pub fn validate(&self, actions: &ActionSpace) -> Result<()> {
        for e in &self.entries {
            if actions.index_of(e.action_kbps).is_none() {
                return Err(Error::param(format!(
                    "database action {} for state {} is not in the action space",
                    e.action_kbps, e.state_kbps
                )));
            }
            if e.occurrences == 0 {
                return Err(Error::param("database occurrences must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::param(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut db: ActionDatabase =
            serde_json::from_str(text).map_err(|e| Error::param(format!("action db: {e}")))?;
        db.entries
            .sort_by(|a, b| a.state_kbps.total_cmp(&b.state_kbps));
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Optimal,
    WhatIf,
    Suboptimal,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Optimal => "optimal",
            Provenance::WhatIf => "what_if",
            Provenance::Suboptimal => "suboptimal",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimal" => Ok(Provenance::Optimal),
            "what_if" => Ok(Provenance::WhatIf),
            "suboptimal" => Ok(Provenance::Suboptimal),
            other => Err(Error::param(format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRecord {
    pub step: usize,
    pub capacity: f64,
    /// Predicted next-state bandwidth, before quantization.
    pub predicted: f64,
    /// Shaper rate actually applied.
    pub action: f64,
    pub achieved: f64,
    pub provenance: Provenance,
}

pub const RECORD_CSV_HEADER: &str = "step,capacity,predicted,action,achieved,provenance";

pub fn records_to_csv(records: &[ClosedLoopRecord]) -> String {
    let mut out = String::from(RECORD_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.capacity, r.predicted, r.action, r.achieved, r.provenance
        );
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<ClosedLoopRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RECORD_CSV_HEADER => {}
        _ => return Err(Error::param("closed-loop csv: missing or wrong header")),
    }
    let num = |s: &str, line: usize| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::param(format!("closed-loop csv line {line}: bad number `{s}`")))
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::param(format!(
                "closed-loop csv line {}: expected 6 fields",
                i + 2
            )));
        }
        out.push(ClosedLoopRecord {
            step: f[0]
                .trim()
                .parse()
                .map_err(|_| Error::param(format!("closed-loop csv line {}: bad step", i + 2)))?,
            capacity: num(f[1], i + 2)?,
            predicted: num(f[2], i + 2)?,
            action: num(f[3], i + 2)?,
            achieved: num(f[4], i + 2)?,
            provenance: f[5].trim().parse()?,
        });
    }
    Ok(out)
}

/// How the loop turns predictions into actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Memory-augmented prediction, action database and what-if learning.
    Twin,
    /// Model-only prediction and the greedy Q-policy over the initially known
    /// states; anything else gets `fallback_kbps`. No learning at run time.
    PolicyOnly { fallback_kbps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwinConfig {
    /// Q-learning episodes per what-if simulation.
    pub what_if_episodes: usize,
    /// Steps of constant capacity per what-if episode.
    pub what_if_steps: usize,
    /// Safety margin above the predicted level for first encounters, in
    /// action steps.
    pub fallback_margin_steps: usize,
    /// Never allocate more than this (the user's requirement), if set.
    pub rate_cap_kbps: Option<f64>,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            what_if_episodes: 200,
            what_if_steps: 10,
            fallback_margin_steps: 2,
            rate_cap_kbps: None,
        }
    }
}

impl TwinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.what_if_episodes == 0 || self.what_if_steps == 0 {
            return Err(Error::param("what-if episodes and steps must be >= 1"));
        }
        if let Some(c) = self.rate_cap_kbps {
            if !(c > 0.0) {
                return Err(Error::param("rate cap must be > 0"));
            }
        }
        Ok(())
    }
}

/// Everything the twin knows about the network.
#[derive(Debug, Clone)]
pub struct TwinState {
    pub predictor: PredictorBundle,
    pub qtable: QTable,
    pub states: StateSpace,
    pub actions: ActionSpace,
    pub reward: RewardParams,
    pub agent: AgentConfig,
    pub link: LinkModel,
    pub config: TwinConfig,
    pub mode: ControlMode,
    pub db: ActionDatabase,
    /// Occurrences (contiguous runs) of each resolved level.
    pub seen_states: BTreeMap<i64, u32>,
    /// Observed capacity telemetry, oldest first.
    pub history: Vec<f64>,
    /// Levels the policy was trained on.
    known_levels: Vec<f64>,
    /// Background what-if results not yet merged into the database.
    pending: Vec<(f64, f64)>,
    current: Option<f64>,
    seed: u64,
}

impl TwinState {
    /// Builds a twin around a trained Q-table. Every trained state enters the
    /// database as `known` with its greedy action.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        predictor: PredictorBundle,
        qtable: QTable,
        states: StateSpace,
        actions: ActionSpace,
        reward: RewardParams,
        agent: AgentConfig,
        link: LinkModel,
        config: TwinConfig,
        seed: u64,
    ) -> Result<Self> {
        states.validate()?;
        actions.validate()?;
        config.validate()?;
        link.validate()?;
        if qtable.n_states() != states.len() || qtable.n_actions() != actions.len() {
            return Err(Error::Shape {
                expected: states.len() * actions.len(),
                actual: qtable.n_states() * qtable.n_actions(),
            });
        }
        let mut db = ActionDatabase::new();
        for (i, &level) in states.levels.iter().enumerate() {
            db.merge(level, actions.rates[qtable.greedy(i)], Origin::Known);
        }
        Ok(Self {
            predictor,
            qtable,
            known_levels: states.levels.clone(),
            states,
            actions,
            reward,
            agent,
            link,
            config,
            mode: ControlMode::Twin,
            db,
            seen_states: BTreeMap::new(),
            history: Vec::new(),
            pending: Vec::new(),
            current: None,
            seed,
        })
    }

    pub fn with_mode(mut self, mode: ControlMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn seen(&self, level: f64) -> u32 {
        self.seen_states.get(&level_key(level)).copied().unwrap_or(0)
    }

    /// Maps a predicted bandwidth to a state level, extending the state space
    /// (and Q-table) when it lies more than half a grid step from every known
    /// level.
    pub fn resolve_level(&mut self, predicted: f64) -> f64 {
        let nearest = self.states.levels[quantize_state(predicted, &self.states)];
        if (predicted - nearest).abs() <= self.states.step / 2.0 + LEVEL_EPS {
            return nearest;
        }
        let level = self.states.grid_level(predicted);
        let (idx, added) = self.states.insert(level);
        if added {
            self.qtable.insert_row(idx);
        }
        level
    }

    fn capped(&self, rate: f64) -> f64 {
        match self.config.rate_cap_kbps {
            Some(c) => rate.min(c),
            None => rate,
        }
    }

    /// Ingests telemetry. Predictions the twin would have made inside the
    /// window are checked against what actually happened and corrected in
    /// memory when off by more than the threshold.
    pub fn sync(&mut self, telemetry: &[f64]) -> Result<usize> {
        let l = self.predictor.seq_len();
        if telemetry.len() < l {
            return Err(Error::InsufficientData(format!(
                "telemetry window of {} is shorter than the sequence length {}",
                telemetry.len(),
                l
            )));
        }
        let before = self.predictor.memory.len();
        for t in l..telemetry.len() {
            let window = &telemetry[t - l..t];
            let (predicted, _) = self.predictor.predict_kbps(window)?;
            self.predictor.observe_kbps(window, predicted, telemetry[t]);
        }
        self.history.extend_from_slice(telemetry);
        Ok(self.predictor.memory.len() - before)
    }

    /// Picks the action for a resolved state level.
    pub fn resolve_action(&self, level: f64) -> (f64, Provenance) {
        let entry = self.db.get(level);
        if let Some(e) = entry {
            if e.origin == Origin::WhatIf {
                return (e.action_kbps, Provenance::WhatIf);
            }
        }
        let seen = self.seen(level);
        match entry {
            None if seen <= 1 => (
                suboptimal_fallback(level, &self.actions, self.config.fallback_margin_steps),
                Provenance::Suboptimal,
            ),
            Some(e) if seen >= 2 => (e.action_kbps, Provenance::Optimal),
            _ => {
                let s = self.states.index_of(level).unwrap_or_else(|| {
                    quantize_state(level, &self.states)
                });
                (self.actions.rates[self.qtable.greedy(s)], Provenance::Optimal)
            }
        }
    }

    /// Optimal action for a constant-capacity link, learned on a scratch
    /// single-state Q-table. Touches nothing in `self`.
    fn simulate(&self, state_kbps: f64) -> Result<(f64, Vec<f64>)> {
        let states = StateSpace::new(vec![state_kbps], self.states.step)?;
        let cfg = AgentConfig {
            episodes: self.config.what_if_episodes,
            ..self.agent
        };
        let trace = VariationSchedule::constant(state_kbps, self.config.what_if_steps)?.capacities();
        let seed = self.seed ^ (level_key(state_kbps) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let q = train_agent(&trace, &self.reward, &states, &self.actions, &cfg, seed)?;
        Ok((self.actions.rates[q.greedy(0)], q.values[0].clone()))
    }

    fn adopt_row(&mut self, state_kbps: f64, row: Vec<f64>) {
        let (idx, added) = self.states.insert(state_kbps);
        if added {
            self.qtable.insert_row(idx);
        }
        self.qtable.values[idx] = row;
    }

    /// Runs a twin-internal simulation of a hypothetical state and records
    /// the optimal action. States the database already covers only get their
    /// occurrence count bumped. A state that was already met with a
    /// suboptimal action is recorded as `adaptive`.
    pub fn what_if(&mut self, state_kbps: f64) -> Result<DbEntry> {
        if !(state_kbps > 0.0) {
            return Err(Error::param("what-if state must be > 0"));
        }
        if let Some(e) = self.db.bump(state_kbps) {
            return Ok(e.clone());
        }
        let (action, row) = self.simulate(state_kbps)?;
        self.adopt_row(state_kbps, row);
        let origin = if self.seen(state_kbps) > 0 {
            Origin::Adaptive
        } else {
            Origin::WhatIf
        };
        Ok(self.db.merge(state_kbps, action, origin).clone())
    }

    fn commit_pending(&mut self) {
        for (state, action) in std::mem::take(&mut self.pending) {
            self.db.merge(state, action, Origin::Adaptive);
        }
    }

    /// Background learning after a suboptimal step: computed now, merged
    /// when the current occurrence ends.
    fn schedule_what_if(&mut self, state_kbps: f64) -> Result<()> {
        if self.pending.iter().any(|(s, _)| level_key(*s) == level_key(state_kbps)) {
            return Ok(());
        }
        let (action, row) = self.simulate(state_kbps)?;
        self.adopt_row(state_kbps, row);
        self.pending.push((state_kbps, action));
        Ok(())
    }

    fn enter_level(&mut self, level: f64) {
        if self.current.map(level_key) == Some(level_key(level)) {
            return;
        }
        self.commit_pending();
        *self.seen_states.entry(level_key(level)).or_insert(0) += 1;
        self.current = Some(level);
    }

    fn policy_only_action(&self, predicted: f64, fallback: f64) -> (f64, Provenance) {
        let nearest = self.known_levels[quantize_state(
            predicted,
            &StateSpace {
                levels: self.known_levels.clone(),
                step: self.states.step,
            },
        )];
        if (predicted - nearest).abs() <= self.states.step / 2.0 + LEVEL_EPS {
            let s = self.states.index_of(nearest).expect("known level");
            (self.actions.rates[self.qtable.greedy(s)], Provenance::Optimal)
        } else {
            (fallback, Provenance::Suboptimal)
        }
    }

    /// Drives the link through `schedule`: predict → decide → shape → observe
    /// → learn, one step at a time.
    pub fn closed_loop_run(
        &mut self,
        schedule: &VariationSchedule,
        offered: f64,
    ) -> Result<Vec<ClosedLoopRecord>> {
        if !self.predictor.is_trained() {
            return Err(Error::State("predictor has not been trained".into()));
        }
        schedule.validate()?;
        let l = self.predictor.seq_len();
        let capacities = schedule.capacities();
        if self.history.len() < l {
            // initial mirror of the link before the loop starts
            let pad = l - self.history.len();
            let mut h = vec![capacities[0]; pad];
            h.append(&mut self.history);
            self.history = h;
        }
        let mut records = Vec::with_capacity(capacities.len());
        for (t, &capacity) in capacities.iter().enumerate() {
            let window = self.history[self.history.len() - l..].to_vec();
            let (predicted, action, provenance) = match self.mode {
                ControlMode::Twin => {
                    let (predicted, _) = self.predictor.predict_kbps(&window)?;
                    let level = self.resolve_level(predicted);
                    self.enter_level(level);
                    let (action, provenance) = self.resolve_action(level);
                    if provenance == Provenance::Suboptimal {
                        self.schedule_what_if(level)?;
                    }
                    (predicted, action, provenance)
                }
                ControlMode::PolicyOnly { fallback_kbps } => {
                    let predicted = self.predictor.predict_kbps_model_only(&window)?;
                    let (action, provenance) = self.policy_only_action(predicted, fallback_kbps);
                    (predicted, action, provenance)
                }
            };
            let rate = self.capped(action);
            let result = netsim::step(offered, ShaperConfig::rate(rate)?, capacity, &self.link);
            if self.mode == ControlMode::Twin {
                self.predictor.observe_kbps(&window, predicted, capacity);
            }
            self.history.push(capacity);
            records.push(ClosedLoopRecord {
                step: t,
                capacity,
                predicted,
                action: rate,
                achieved: result.achieved,
                provenance,
            });
        }
        self.commit_pending();
        self.current = None;
        Ok(records)
    }
}

/// First-encounter action: the predicted level rounded up to the action grid
/// plus a safety margin, clamped to the largest action.
pub fn suboptimal_fallback(predicted: f64, actions: &ActionSpace, margin_steps: usize) -> f64 {
    let up = actions
        .rates
        .iter()
        .position(|&r| r >= predicted - LEVEL_EPS)
        .unwrap_or(actions.len() - 1);
    actions.rates[(up + margin_steps).min(actions.len() - 1)]
}
