//! Scenario configuration: one JSON document with a section per module.
//! Every field has a default, so `{}` is a valid config.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{ActionSpace, AgentConfig, RewardParams, StateSpace};
use crate::error::{Error, Result};
use crate::netsim::{LinkModel, VariationSchedule};
use crate::predictor::{TrainConfig, DEFAULT_CAPACITY, DEFAULT_DELTA_KBPS};
use crate::rng::sim_rng;
use crate::traffic::{PlateauParams, TrafficParams};
use crate::twin::TwinConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    #[default]
    Default,
    WhatIf,
    Adaptive,
    Compare,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::Default,
        ScenarioName::WhatIf,
        ScenarioName::Adaptive,
        ScenarioName::Compare,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Default => "default",
            ScenarioName::WhatIf => "what_if",
            ScenarioName::Adaptive => "adaptive",
            ScenarioName::Compare => "compare",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == norm)
            .ok_or_else(|| {
                Error::config(
                    "name",
                    format!("unknown scenario `{s}` (expected default, what_if, adaptive or compare)"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub hidden_size: usize,
    /// Window length L.
    pub seq_len: usize,
    pub delta_kbps: f64,
    pub memory_capacity: usize,
    pub train: TrainConfig,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            seq_len: 9,
            delta_kbps: DEFAULT_DELTA_KBPS,
            memory_capacity: DEFAULT_CAPACITY,
            train: TrainConfig {
                learning_rate: 1e-2,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub states: StateSpace,
    pub actions: ActionSpace,
    pub reward: RewardParams,
    pub learning: AgentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetsimSection {
    pub link: LinkModel,
    /// Offered load in the single-scenario runs; saturates every action.
    pub offered_kbps: f64,
    /// Steps per level in the built-in schedules.
    pub block_steps: usize,
    /// Replaces the built-in schedule of single-scenario runs when set.
    pub schedule: Option<VariationSchedule>,
}

impl Default for NetsimSection {
    fn default() -> Self {
        Self {
            link: LinkModel::default(),
            offered_kbps: 600.0,
            block_steps: 10,
            schedule: None,
        }
    }
}

/// Probe segments injected into the default schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenariosSection {
    /// New state precomputed by what-if before the run.
    pub what_if_kbps: f64,
    /// New state met twice with no prior knowledge.
    pub adaptive_kbps: f64,
    pub probe_steps: usize,
}

impl Default for ScenariosSection {
    fn default() -> Self {
        Self {
            what_if_kbps: 100.0,
            adaptive_kbps: 50.0,
            probe_steps: 8,
        }
    }
}

/// Five-technique comparison on a seeded periodic variation pattern.
///
/// A period is `groups_per_period` groups of `highs_per_group` distinct high
/// levels followed by one dip. Every high level appears at most once per
/// period and no segment is longer than the predictor window, so each window
/// of the pattern has a unique continuation the twin's memory can learn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Link capacity without variation.
    pub nominal_kbps: f64,
    /// Backlogged sender: offered load in every technique.
    pub offered_kbps: f64,
    pub periods: usize,
    pub groups_per_period: usize,
    pub highs_per_group: usize,
    pub high_levels: Vec<f64>,
    pub high_dwell: [usize; 2],
    pub dip_levels: Vec<f64>,
    pub dip_dwell: [usize; 2],
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            nominal_kbps: 500.0,
            offered_kbps: 500.0,
            periods: 4,
            groups_per_period: 2,
            highs_per_group: 2,
            high_levels: vec![350.0, 400.0, 450.0, 500.0],
            high_dwell: [6, 9],
            dip_levels: vec![300.0],
            dip_dwell: [6, 9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Pre-trained predictor bundle to load instead of training.
    pub bundle: Option<PathBuf>,
    /// Action database file (defaults to `<out>/action_db.json`).
    pub action_db: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: ScenarioName,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// The user's bandwidth requirement in Kbps.
    pub required_bandwidth: f64,
    /// Poisson dataset for the standalone predictor benchmark.
    pub traffic: TrafficParams,
    /// Plateau telemetry the twin's predictor is trained on.
    pub telemetry: PlateauParams,
    pub predictor: PredictorSection,
    pub agent: AgentSection,
    pub twin: TwinConfig,
    pub netsim: NetsimSection,
    pub scenarios: ScenariosSection,
    pub compare: CompareSection,
    pub paths: PathsSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: ScenarioName::Default,
            seed: 7,
            output_dir: PathBuf::from("out"),
            required_bandwidth: 310.0,
            traffic: TrafficParams::default(),
            telemetry: PlateauParams::default(),
            predictor: PredictorSection::default(),
            agent: AgentSection::default(),
            twin: TwinConfig::default(),
            netsim: NetsimSection::default(),
            scenarios: ScenariosSection::default(),
            compare: CompareSection::default(),
            paths: PathsSection::default(),
        }
    }
}

fn at(path: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        Error::Parameter(m) => Error::config(path, m),
        other => Error::config(path, other.to_string()),
    }
}

fn ensure(ok: bool, path: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(path, msg))
    }
}

fn ensure_dwell(d: [usize; 2], path: &str) -> Result<()> {
    ensure(d[0] >= 1 && d[0] <= d[1], path, "dwell must satisfy 1 <= min <= max")
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; every failure names the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config { path: field, message } if field == "<config>" => {
                Error::config(path.display().to_string(), message)
            }
            Error::Config { path: field, message } => {
                Error::config(format!("{}: {field}", path.display()), message)
            }
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.required_bandwidth > 0.0 && self.required_bandwidth.is_finite(),
            "required_bandwidth",
            "must be > 0",
        )?;
        self.traffic.validate().map_err(at("traffic"))?;
        self.telemetry.validate().map_err(at("telemetry"))?;
        let p = &self.predictor;
        ensure(p.hidden_size >= 1, "predictor.hidden_size", "must be >= 1")?;
        ensure(p.seq_len >= 1, "predictor.seq_len", "must be >= 1")?;
        ensure(p.delta_kbps >= 0.0, "predictor.delta_kbps", "must be >= 0")?;
        ensure(p.memory_capacity >= 1, "predictor.memory_capacity", "must be >= 1")?;
        p.train.validate().map_err(at("predictor.train"))?;
        ensure(
            self.telemetry.length > p.seq_len,
            "telemetry.length",
            "must exceed predictor.seq_len",
        )?;
        self.agent.states.validate().map_err(at("agent.states"))?;
        self.agent.actions.validate().map_err(at("agent.actions"))?;
        self.agent.reward.validate().map_err(at("agent.reward"))?;
        self.agent.learning.validate().map_err(at("agent.learning"))?;
        self.twin.validate().map_err(at("twin"))?;
        self.netsim.link.validate().map_err(at("netsim.link"))?;
        ensure(self.netsim.offered_kbps >= 0.0, "netsim.offered_kbps", "must be >= 0")?;
        ensure(self.netsim.block_steps >= 1, "netsim.block_steps", "must be >= 1")?;
        if let Some(s) = &self.netsim.schedule {
            s.validate().map_err(at("netsim.schedule"))?;
        }
        let sc = &self.scenarios;
        ensure(sc.what_if_kbps > 0.0, "scenarios.what_if_kbps", "must be > 0")?;
        ensure(sc.adaptive_kbps > 0.0, "scenarios.adaptive_kbps", "must be > 0")?;
        ensure(sc.probe_steps >= 1, "scenarios.probe_steps", "must be >= 1")?;
        let c = &self.compare;
        ensure(c.nominal_kbps > 0.0, "compare.nominal_kbps", "must be > 0")?;
        ensure(c.offered_kbps >= 0.0, "compare.offered_kbps", "must be >= 0")?;
        ensure(c.periods >= 1, "compare.periods", "must be >= 1")?;
        ensure(c.groups_per_period >= 1, "compare.groups_per_period", "must be >= 1")?;
        ensure(c.highs_per_group >= 1, "compare.highs_per_group", "must be >= 1")?;
        ensure(
            c.groups_per_period * c.highs_per_group <= c.high_levels.len(),
            "compare.high_levels",
            "needs one distinct level per high segment of a period",
        )?;
        ensure(
            !c.high_levels.is_empty() && c.high_levels.iter().all(|l| *l > 0.0),
            "compare.high_levels",
            "needs at least one positive level",
        )?;
        ensure(
            !c.dip_levels.is_empty() && c.dip_levels.iter().all(|l| *l > 0.0),
            "compare.dip_levels",
            "needs at least one positive level",
        )?;
        ensure_dwell(c.high_dwell, "compare.high_dwell")?;
        ensure_dwell(c.dip_dwell, "compare.dip_dwell")?;
        Ok(())
    }

    fn known_blocks(&self) -> Vec<(f64, usize)> {
        self.agent
            .states
            .levels
            .iter()
            .map(|&l| (l, self.netsim.block_steps))
            .collect()
    }

    /// Capacity trace the policy is trained on: every known state in turn.
    pub fn training_schedule(&self) -> Result<VariationSchedule> {
        VariationSchedule::from_blocks(&self.known_blocks())
    }

    /// Schedule of a single-scenario run.
    pub fn schedule(&self, name: ScenarioName) -> Result<VariationSchedule> {
        if let Some(s) = &self.netsim.schedule {
            return Ok(s.clone());
        }
        let mut blocks = self.known_blocks();
        let probe = self.scenarios.probe_steps;
        match name {
            ScenarioName::Default => {}
            ScenarioName::WhatIf => {
                let mid = blocks.len() / 2;
                blocks.insert(mid, (self.scenarios.what_if_kbps, probe));
            }
            ScenarioName::Adaptive => {
                let n = blocks.len();
                blocks.insert(3 * n / 4, (self.scenarios.adaptive_kbps, probe));
                blocks.insert(n / 4, (self.scenarios.adaptive_kbps, probe));
            }
            ScenarioName::Compare => return self.compare_schedule(),
        }
        VariationSchedule::from_blocks(&blocks)
    }

    /// A random high/dip pattern, repeated `periods` times so the twin can
    /// learn it.
    pub fn compare_schedule(&self) -> Result<VariationSchedule> {
        let c = &self.compare;
        let mut rng = sim_rng(self.seed);
        let mut highs = c.high_levels.clone();
        // partial Fisher-Yates: distinct highs for the whole period
        let n_highs = c.groups_per_period * c.highs_per_group;
        for i in 0..n_highs {
            let j = rng.gen_range(i..highs.len());
            highs.swap(i, j);
        }
        let mut period: Vec<(f64, usize)> = Vec::new();
        for g in 0..c.groups_per_period {
            for h in 0..c.highs_per_group {
                let level = highs[g * c.highs_per_group + h];
                period.push((level, rng.gen_range(c.high_dwell[0]..=c.high_dwell[1])));
            }
            let dip = c.dip_levels[rng.gen_range(0..c.dip_levels.len())];
            period.push((dip, rng.gen_range(c.dip_dwell[0]..=c.dip_dwell[1])));
        }
        let blocks: Vec<(f64, usize)> = (0..c.periods).flat_map(|_| period.iter().copied()).collect();
        VariationSchedule::from_blocks(&blocks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ScenarioConfig::from_json("{}").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn defaults_roundtrip() {
        let cfg = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(matches!(
            ScenarioConfig::from_json(r#"{"sede": 3}"#),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn bad_field_names_path() {
        let err = ScenarioConfig::from_json(r#"{"agent": {"learning": {"alpha": 0.0}}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "agent.learning"),
            other => panic!("unexpected {other:?}"),
        }
        let err = ScenarioConfig::from_json(r#"{"required_bandwidth": -1}"#).unwrap_err();
        assert!(matches!(err, Error::Config { path, .. } if path == "required_bandwidth"));
    }

    #[test]
    fn unknown_scenario_name() {
        assert!(ScenarioConfig::from_json(r#"{"name": "nope"}"#).is_err());
        assert_eq!("what-if".parse::<ScenarioName>().unwrap(), ScenarioName::WhatIf);
    }

    #[test]
    fn missing_file_names_path() {
        let err = ScenarioConfig::load(Path::new("/definitely/not/here.json")).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.json"));
    }

    #[test]
    fn builtin_schedules() {
        let cfg = ScenarioConfig::default();
        let d = cfg.schedule(ScenarioName::Default).unwrap();
        assert_eq!(d.total_steps, 80);
        assert_eq!(d.capacity_at(0).unwrap(), 150.0);
        assert_eq!(d.capacity_at(79).unwrap(), 500.0);

        let w = cfg.schedule(ScenarioName::WhatIf).unwrap();
        assert_eq!(w.total_steps, 88);
        assert_eq!(w.segment_ranges(100.0), vec![(40, 48)]);

        let a = cfg.schedule(ScenarioName::Adaptive).unwrap();
        assert_eq!(a.total_steps, 96);
        assert_eq!(a.segment_ranges(50.0), vec![(20, 28), (68, 76)]);
    }

    #[test]
    fn compare_schedule_is_periodic_and_seeded() {
        let cfg = ScenarioConfig::default();
        let s = cfg.compare_schedule().unwrap();
        let caps = s.capacities();
        let period = caps.len() / cfg.compare.periods;
        assert_eq!(caps.len() % cfg.compare.periods, 0);
        assert_eq!(caps[..period], caps[period..2 * period]);
        assert_eq!(s, cfg.compare_schedule().unwrap());
        let other = ScenarioConfig { seed: 8, ..cfg.clone() };
        assert_ne!(other.compare_schedule().unwrap(), s);
        assert!(caps.windows(2).any(|w| w[0] != w[1]));
        // distinct highs within a period
        let mut highs: Vec<f64> = s.segments[..6]
            .iter()
            .map(|seg| seg.kbps)
            .filter(|k| *k > cfg.required_bandwidth)
            .collect();
        let n = highs.len();
        highs.dedup();
        assert_eq!((n, highs.len()), (4, 4));
    }
}
