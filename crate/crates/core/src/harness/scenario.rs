//! End-to-end pipeline: telemetry → predictor → policy → twin → closed loop.

use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, ScenarioName};
use crate::agent::{train_agent, QTable};
use crate::error::{Error, Result};
use crate::netsim::{self, ShaperConfig, VariationSchedule};
use crate::predictor::{train, BiLstmModel, MemoryModule, PredictorBundle};
use crate::traffic::{fit_normalize, generate_plateau_series, windowize};
use crate::twin::{ClosedLoopRecord, ControlMode, TwinConfig, TwinState};

/// Trains the twin's predictor on plateau telemetry.
pub fn train_predictor(cfg: &ScenarioConfig) -> Result<PredictorBundle> {
    let p = &cfg.predictor;
    let series = generate_plateau_series(&cfg.telemetry)?;
    let (normalized, scaler) = fit_normalize(&series)?;
    let windows = windowize(&normalized, p.seq_len)?;
    let init = BiLstmModel::init(p.hidden_size, p.seq_len, cfg.telemetry.seed)?;
    let (model, loss_history) = train(&init, &windows, &p.train)?;
    Ok(PredictorBundle {
        model,
        scaler,
        memory: MemoryModule::with_capacity(p.memory_capacity),
        delta_kbps: p.delta_kbps,
        loss_history,
    })
}

/// Loads the configured bundle, or trains one.
pub fn obtain_predictor(cfg: &ScenarioConfig) -> Result<PredictorBundle> {
    match &cfg.paths.bundle {
        Some(path) => PredictorBundle::load(path),
        None => train_predictor(cfg),
    }
}

/// Q-learning over the known states, one block per state.
pub fn train_policy(cfg: &ScenarioConfig) -> Result<QTable> {
    let a = &cfg.agent;
    let trace = cfg.training_schedule()?.capacities();
    train_agent(&trace, &a.reward, &a.states, &a.actions, &a.learning, cfg.seed)
}

pub fn build_twin(
    cfg: &ScenarioConfig,
    predictor: PredictorBundle,
    qtable: QTable,
    twin_cfg: TwinConfig,
) -> Result<TwinState> {
    let a = &cfg.agent;
    TwinState::new(
        predictor,
        qtable,
        a.states.clone(),
        a.actions.clone(),
        a.reward,
        a.learning,
        cfg.netsim.link,
        twin_cfg,
        cfg.seed,
    )
}

/// Mean throughput of one comparison technique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueResult {
    pub id: String,
    pub label: String,
    pub mean_kbps: f64,
}

/// One step of one comparison technique.
#[derive(Debug, Clone, PartialEq)]
pub struct TechniqueStep {
    pub technique: String,
    pub step: usize,
    pub capacity: f64,
    /// Shaper rate, `None` when unshaped.
    pub shaper: Option<f64>,
    pub achieved: f64,
    /// Throughput counted toward the user's requirement.
    pub useful: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: usize,
    pub mean_achieved: f64,
    pub mean_abs_error: f64,
    pub warmup_steps: usize,
    /// Mean |achieved − capacity| from `warmup_steps` on.
    pub mean_abs_error_after_warmup: f64,
    pub techniques: Vec<TechniqueResult>,
}

pub const WARMUP_STEPS: usize = 10;

impl Summary {
    /// Everything except the technique table is a function of the records.
    pub fn from_records(records: &[ClosedLoopRecord], techniques: Vec<TechniqueResult>) -> Self {
        let n = records.len();
        let mean = |it: &mut dyn Iterator<Item = f64>, n: usize| {
            if n == 0 {
                0.0
            } else {
                it.sum::<f64>() / n as f64
            }
        };
        let after = records.iter().filter(|r| r.step >= WARMUP_STEPS).count();
        Self {
            steps: n,
            mean_achieved: mean(&mut records.iter().map(|r| r.achieved), n),
            mean_abs_error: mean(&mut records.iter().map(|r| (r.achieved - r.capacity).abs()), n),
            warmup_steps: WARMUP_STEPS,
            mean_abs_error_after_warmup: mean(
                &mut records
                    .iter()
                    .filter(|r| r.step >= WARMUP_STEPS)
                    .map(|r| (r.achieved - r.capacity).abs()),
                after,
            ),
            techniques,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub name: ScenarioName,
    pub seed: u64,
    pub schedule: VariationSchedule,
    pub records: Vec<ClosedLoopRecord>,
    /// Per-step trace of every technique (compare only).
    pub technique_steps: Vec<TechniqueStep>,
    pub summary: Summary,
    /// Twin after the run, for persisting its database and Q-table.
    pub twin: TwinState,
}

/// Runs the named scenario end to end.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let predictor = obtain_predictor(cfg)?;
    run_scenario_with(cfg, &predictor)
}

/// Same as [`run_scenario`] with an already trained predictor.
pub fn run_scenario_with(cfg: &ScenarioConfig, predictor: &PredictorBundle) -> Result<ScenarioReport> {
    cfg.validate()?;
    if predictor.seq_len() != cfg.predictor.seq_len {
        return Err(Error::config(
            "predictor.seq_len",
            format!(
                "bundle expects windows of {}, config says {}",
                predictor.seq_len(),
                cfg.predictor.seq_len
            ),
        ));
    }
    if cfg.name == ScenarioName::Compare {
        return compare_techniques(cfg, predictor);
    }
    let qtable = train_policy(cfg)?;
    let mut twin = build_twin(cfg, predictor.clone(), qtable, cfg.twin.clone())?;
    if cfg.name == ScenarioName::WhatIf {
        twin.what_if(cfg.scenarios.what_if_kbps)?;
    }
    let schedule = cfg.schedule(cfg.name)?;
    let records = twin.closed_loop_run(&schedule, cfg.netsim.offered_kbps)?;
    Ok(ScenarioReport {
        name: cfg.name,
        seed: cfg.seed,
        summary: Summary::from_records(&records, Vec::new()),
        schedule,
        records,
        technique_steps: Vec::new(),
        twin,
    })
}

pub const TECHNIQUES: [(&str, &str); 5] = [
    ("t1", "no variation"),
    ("t2", "variation"),
    ("t3", "variation + TS"),
    ("t4", "variation + TS + ZTN"),
    ("t5", "variation + TS + ZTN + DT"),
];

fn open_loop(
    id: &str,
    capacities: &[f64],
    shaper: ShaperConfig,
    cfg: &ScenarioConfig,
) -> Vec<TechniqueStep> {
    capacities
        .iter()
        .enumerate()
        .map(|(t, &cap)| {
            let r = netsim::step(cfg.compare.offered_kbps, shaper, cap, &cfg.netsim.link);
            TechniqueStep {
                technique: id.to_string(),
                step: t,
                capacity: cap,
                shaper: match shaper {
                    ShaperConfig::Unlimited => None,
                    ShaperConfig::Rate(x) => Some(x),
                },
                achieved: r.achieved,
                useful: r.achieved.min(cfg.required_bandwidth),
            }
        })
        .collect()
}

fn closed_loop_steps(id: &str, records: &[ClosedLoopRecord], required: f64) -> Vec<TechniqueStep> {
    records
        .iter()
        .map(|r| TechniqueStep {
            technique: id.to_string(),
            step: r.step,
            capacity: r.capacity,
            shaper: Some(r.action),
            achieved: r.achieved,
            useful: r.achieved.min(required),
        })
        .collect()
}

/// Mean useful throughput per technique id, in technique order.
pub fn technique_means(steps: &[TechniqueStep]) -> Vec<TechniqueResult> {
    TECHNIQUES
        .iter()
        .filter_map(|(id, label)| {
            let v: Vec<f64> = steps
                .iter()
                .filter(|s| s.technique == *id)
                .map(|s| s.useful)
                .collect();
            (!v.is_empty()).then(|| TechniqueResult {
                id: id.to_string(),
                label: label.to_string(),
                mean_kbps: v.iter().sum::<f64>() / v.len() as f64,
            })
        })
        .collect()
}

/// The five techniques on the same variation pattern. The sender is
/// backlogged at `compare.offered_kbps`; only throughput up to the required
/// bandwidth counts.
pub fn compare_techniques(cfg: &ScenarioConfig, predictor: &PredictorBundle) -> Result<ScenarioReport> {
    cfg.validate()?;
    let required = cfg.required_bandwidth;
    let schedule = cfg.compare_schedule()?;
    let caps = schedule.capacities();
    let nominal = vec![cfg.compare.nominal_kbps; caps.len()];

    let mut steps = open_loop("t1", &nominal, ShaperConfig::Unlimited, cfg);
    steps.extend(open_loop("t2", &caps, ShaperConfig::Unlimited, cfg));
    steps.extend(open_loop("t3", &caps, ShaperConfig::rate(required)?, cfg));

    let qtable = train_policy(cfg)?;
    let twin_cfg = TwinConfig {
        rate_cap_kbps: Some(required),
        ..cfg.twin.clone()
    };
    let mut ztn = build_twin(cfg, predictor.clone(), qtable.clone(), twin_cfg.clone())?
        .with_mode(ControlMode::PolicyOnly {
            fallback_kbps: required,
        });
    let ztn_records = ztn.closed_loop_run(&schedule, cfg.compare.offered_kbps)?;
    steps.extend(closed_loop_steps("t4", &ztn_records, required));

    let mut twin = build_twin(cfg, predictor.clone(), qtable, twin_cfg)?;
    let records = twin.closed_loop_run(&schedule, cfg.compare.offered_kbps)?;
    steps.extend(closed_loop_steps("t5", &records, required));

    let techniques = technique_means(&steps);
    Ok(ScenarioReport {
        name: ScenarioName::Compare,
        seed: cfg.seed,
        summary: Summary::from_records(&records, techniques),
        schedule,
        records,
        technique_steps: steps,
        twin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twin::Provenance;

    fn rec(step: usize, capacity: f64, achieved: f64) -> ClosedLoopRecord {
        ClosedLoopRecord {
            step,
            capacity,
            predicted: capacity,
            action: achieved,
            achieved,
            provenance: Provenance::Optimal,
        }
    }

    #[test]
    fn summary_arithmetic() {
        let mut records: Vec<_> = (0..10).map(|t| rec(t, 200.0, 100.0)).collect();
        records.push(rec(10, 300.0, 290.0));
        records.push(rec(11, 300.0, 300.0));
        let s = Summary::from_records(&records, Vec::new());
        assert_eq!(s.steps, 12);
        assert!((s.mean_achieved - (1000.0 + 590.0) / 12.0).abs() < 1e-12);
        assert!((s.mean_abs_error - 1010.0 / 12.0).abs() < 1e-12);
        assert!((s.mean_abs_error_after_warmup - 5.0).abs() < 1e-12);
    }

    #[test]
    fn technique_means_in_order() {
        let steps = vec![
            TechniqueStep {
                technique: "t2".into(),
                step: 0,
                capacity: 1.0,
                shaper: None,
                achieved: 1.0,
                useful: 4.0,
            },
            TechniqueStep {
                technique: "t1".into(),
                step: 0,
                capacity: 1.0,
                shaper: None,
                achieved: 1.0,
                useful: 2.0,
            },
        ];
        let m = technique_means(&steps);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].id.as_str(), m[0].mean_kbps), ("t1", 2.0));
        assert_eq!((m[1].id.as_str(), m[1].mean_kbps), ("t2", 4.0));
    }

    #[test]
    fn open_loop_without_variation_meets_requirement() {
        let cfg = ScenarioConfig::default();
        let steps = open_loop("t1", &[500.0; 5], ShaperConfig::Unlimited, &cfg);
        assert!(steps.iter().all(|s| s.useful == 310.0));
    }

    #[test]
    fn bundle_window_mismatch_is_config_error() {
        let mut p = PredictorBundle::new(
            BiLstmModel::zeros(2, 4).unwrap(),
            crate::traffic::Scaler::new(0.0, 1.0).unwrap(),
        );
        p.loss_history = vec![1.0];
        let err = run_scenario_with(&ScenarioConfig::default(), &p).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }
}
