//! wasm-bindgen surface for the static demo page in `www/`.
//!
//! Every export returns a JSON string; the page draws it on a canvas.

use std::cell::RefCell;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use bwtwin::harness::{run_scenario_with, train_predictor, ScenarioConfig, ScenarioName};
use bwtwin::predictor::PredictorBundle;
use bwtwin::traffic::{generate_series, TrafficParams};
use bwtwin::twin::Provenance;

thread_local! {
    static PREDICTOR: RefCell<Option<(u32, PredictorBundle)>> = const { RefCell::new(None) };
}

#[derive(Serialize)]
struct SeriesOut {
    values: Vec<f64>,
    mean: f64,
}

pub fn traffic_json(lambda: f64, unit_size: f64, length: usize, seed: u32) -> Result<String, String> {
    let s = generate_series(&TrafficParams {
        lambda,
        unit_size,
        length,
        seed: seed.into(),
    })
    .map_err(|e| e.to_string())?;
    let mean = s.mean();
    serde_json::to_string(&SeriesOut {
        values: s.values,
        mean,
    })
    .map_err(|e| e.to_string())
}

fn demo_config(epochs: u32) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.predictor.train.epochs = epochs as usize;
    cfg
}

/// Trains the twin's predictor and keeps it for later runs. Returns the
/// per-epoch loss.
pub fn train_json(epochs: u32) -> Result<String, String> {
    let bundle = train_predictor(&demo_config(epochs)).map_err(|e| e.to_string())?;
    let out = serde_json::to_string(&bundle.loss_history).map_err(|e| e.to_string())?;
    PREDICTOR.with(|p| *p.borrow_mut() = Some((epochs, bundle)));
    Ok(out)
}

#[derive(Serialize)]
struct RecordOut {
    capacity: f64,
    predicted: f64,
    action: f64,
    achieved: f64,
    provenance: &'static str,
}

#[derive(Serialize)]
struct ScenarioOut {
    records: Vec<RecordOut>,
    mean_achieved: f64,
    mean_abs_error: f64,
    techniques: Vec<(String, f64)>,
}

pub fn scenario_json(name: &str, seed: u32) -> Result<String, String> {
    let name: ScenarioName = name.parse().map_err(|e: bwtwin::Error| e.to_string())?;
    PREDICTOR.with(|p| {
        let guard = p.borrow();
        let (epochs, bundle) = guard
            .as_ref()
            .ok_or_else(|| "train the twin first".to_string())?;
        let cfg = ScenarioConfig {
            name,
            seed: seed.into(),
            ..demo_config(*epochs)
        };
        let report = run_scenario_with(&cfg, bundle).map_err(|e| e.to_string())?;
        let out = ScenarioOut {
            records: report
                .records
                .iter()
                .map(|r| RecordOut {
                    capacity: r.capacity,
                    predicted: r.predicted,
                    action: r.action,
                    achieved: r.achieved,
                    provenance: Provenance::as_str(r.provenance),
                })
                .collect(),
            mean_achieved: report.summary.mean_achieved,
            mean_abs_error: report.summary.mean_abs_error,
            techniques: report
                .summary
                .techniques
                .iter()
                .map(|t| (t.label.clone(), t.mean_kbps))
                .collect(),
        };
        serde_json::to_string(&out).map_err(|e| e.to_string())
    })
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Poisson traffic series as `{values, mean}`.
#[wasm_bindgen]
pub fn traffic(lambda: f64, unit_size: f64, length: usize, seed: u32) -> Result<String, JsValue> {
    js(traffic_json(lambda, unit_size, length, seed))
}

/// Trains the twin; returns the loss history.
#[wasm_bindgen]
pub fn train_twin(epochs: u32) -> Result<String, JsValue> {
    js(train_json(epochs))
}

/// Runs `default`, `what_if`, `adaptive` or `compare` with the trained twin.
#[wasm_bindgen]
pub fn run_scenario(name: &str, seed: u32) -> Result<String, JsValue> {
    js(scenario_json(name, seed))
}
