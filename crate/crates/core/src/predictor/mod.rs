//! Memory-augmented BiLSTM next-state predictor.
//!
//! A prediction is served from the memory module when the quantized input
//! window has been stored before, and from the BiLSTM otherwise. Whenever the
//! denormalized error against the observed value exceeds `delta_kbps`, the
//! observed value is written into memory so the same window is answered
//! exactly next time.

mod lstm;
mod memory;
mod train;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use lstm::{BiLstmModel, LstmCell};
pub use memory::{sequence_key, MemoryEntry, MemoryModule, DEFAULT_CAPACITY};
pub use train::{train, TrainConfig};

use crate::error::{Error, Result};
use crate::traffic::{Scaler, WindowSet};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_DELTA_KBPS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Memory,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Normalized next value.
    pub value: f64,
    pub source: PredictionSource,
}

pub fn predict_with_memory(
    memory: &MemoryModule,
    model: &BiLstmModel,
    xs: &[f64],
) -> Result<Prediction> {
    if xs.len() != model.seq_len {
        return Err(Error::Shape {
            expected: model.seq_len,
            actual: xs.len(),
        });
    }
    if let Some(value) = memory.lookup(xs) {
        return Ok(Prediction {
            value,
            source: PredictionSource::Memory,
        });
    }
    Ok(Prediction {
        value: model.forward(xs)?.clamp(0.0, 1.0),
        source: PredictionSource::Model,
    })
}

/// Threshold rule: if `|denorm(y_hat) - denorm(y_desired)| > delta_kbps` the
/// window is stored with `y_desired` and `y_desired` is returned; otherwise
/// memory is untouched and `y_hat` is returned.
pub fn memory_update(
    memory: &mut MemoryModule,
    xs: &[f64],
    y_hat: f64,
    y_desired: f64,
    delta_kbps: f64,
    scaler: &Scaler,
) -> f64 {
    let err_kbps = (scaler.inverse(y_hat) - scaler.inverse(y_desired)).abs();
    if err_kbps > delta_kbps {
        memory.insert(xs, y_desired);
        y_desired
    } else {
        y_hat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Kbps^2
    pub mse: f64,
    /// Kbps
    pub mae: f64,
    /// Windows answered from memory.
    pub memory_hits: usize,
}

/// Denormalized error of `predict_with_memory` over every window.
pub fn evaluate(
    model: &BiLstmModel,
    memory: &MemoryModule,
    windows: &WindowSet,
    scaler: &Scaler,
) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(Error::InsufficientData("no evaluation windows".into()));
    }
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut hits = 0;
    for (xs, target) in windows.pairs() {
        let p = predict_with_memory(memory, model, xs)?;
        if p.source == PredictionSource::Memory {
            hits += 1;
        }
        let err = scaler.inverse(p.value) - scaler.inverse(target);
        se += err * err;
        ae += err.abs();
    }
    let n = windows.len() as f64;
    Ok(Metrics {
        mse: se / n,
        mae: ae / n,
        memory_hits: hits,
    })
}

/// Everything the twin needs to predict the next bandwidth state.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorBundle {
    pub model: BiLstmModel,
    pub scaler: Scaler,
    pub memory: MemoryModule,
    pub delta_kbps: f64,
    /// Per-epoch training MSE; empty for an untrained model.
    pub loss_history: Vec<f64>,
}

impl PredictorBundle {
    pub fn new(model: BiLstmModel, scaler: Scaler) -> Self {
        Self {
            model,
            scaler,
            memory: MemoryModule::default(),
            delta_kbps: DEFAULT_DELTA_KBPS,
            loss_history: Vec::new(),
        }
    }

    pub fn is_trained(&self) -> bool {
        !self.loss_history.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.model.seq_len
    }

    /// Normalizes a raw Kbps window with the bundle's scaler.
    pub fn normalize_window(&self, kbps: &[f64]) -> Vec<f64> {
        kbps.iter().map(|&b| self.scaler.transform(b)).collect()
    }

    /// Predicts the next value in Kbps from a raw Kbps window.
    pub fn predict_kbps(&self, kbps: &[f64]) -> Result<(f64, PredictionSource)> {
        let xs = self.normalize_window(kbps);
        let p = predict_with_memory(&self.memory, &self.model, &xs)?;
        Ok((self.scaler.inverse(p.value), p.source))
    }

    /// Predicts without consulting memory.
    pub fn predict_kbps_model_only(&self, kbps: &[f64]) -> Result<f64> {
        let xs = self.normalize_window(kbps);
        let y = self.model.forward(&xs)?.clamp(0.0, 1.0);
        Ok(self.scaler.inverse(y))
    }

    /// Applies the threshold rule to a raw window given the observed next
    /// value. Returns the corrected prediction in Kbps.
    pub fn observe_kbps(&mut self, kbps: &[f64], predicted: f64, actual: f64) -> f64 {
        let xs = self.normalize_window(kbps);
        let corrected = memory_update(
            &mut self.memory,
            &xs,
            self.scaler.transform(predicted),
            self.scaler.transform(actual),
            self.delta_kbps,
            &self.scaler,
        );
        self.scaler.inverse(corrected)
    }

    pub fn evaluate(&self, windows: &WindowSet) -> Result<Metrics> {
        evaluate(&self.model, &self.memory, windows, &self.scaler)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = BundleFile {
            format_version: BUNDLE_FORMAT_VERSION,
            hidden_size: self.model.hidden,
            seq_len: self.model.seq_len,
            scaler: self.scaler,
            delta_kbps: self.delta_kbps,
            memory_capacity: self.memory.capacity(),
            loss_history: self.loss_history.clone(),
            weights: self
                .model
                .named_weights()
                .into_iter()
                .map(|(name, shape, data)| (name, WeightArray { shape, data }))
                .collect(),
            memory: self.memory.entries(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::param(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BundleFile =
            serde_json::from_str(text).map_err(|e| Error::param(format!("bundle: {e}")))?;
        if file.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::param(format!(
                "unsupported bundle format_version {}",
                file.format_version
            )));
        }
        let mut model = BiLstmModel::zeros(file.hidden_size, file.seq_len)?;
        let expected: Vec<String> = model.named_weights().into_iter().map(|w| w.0).collect();
        for name in &expected {
            let w = file
                .weights
                .get(name)
                .ok_or_else(|| Error::param(format!("bundle: missing weight `{name}`")))?;
            model.set_named_weight(name, &w.data)?;
        }
        let scaler = Scaler::new(file.scaler.b_min, file.scaler.b_max)?;
        let mut memory = MemoryModule::with_capacity(file.memory_capacity);
        for e in file.memory {
            memory.insert_key(e.key, e.value);
        }
        Ok(Self {
            model,
            scaler,
            memory,
            delta_kbps: file.delta_kbps,
            loss_history: file.loss_history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleFile {
    format_version: u32,
    hidden_size: usize,
    #[serde(rename = "L")]
    seq_len: usize,
    scaler: Scaler,
    delta_kbps: f64,
    memory_capacity: usize,
    #[serde(default)]
    loss_history: Vec<f64>,
    weights: BTreeMap<String, WeightArray>,
    memory: Vec<MemoryEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scaler() -> Scaler {
        Scaler::new(0.0, 1000.0).unwrap()
    }

    #[test]
    fn memory_branch_returns_stored_value() {
        let model = BiLstmModel::init(3, 3, 1).unwrap();
        let mut mem = MemoryModule::default();
        let xs = [0.1, 0.2, 0.3];
        mem.insert(&xs, 0.42);
        let p = predict_with_memory(&mem, &model, &xs).unwrap();
        assert_eq!(p, Prediction { value: 0.42, source: PredictionSource::Memory });
    }

    #[test]
    fn model_branch_is_clamped_forward() {
        let model = BiLstmModel::init(3, 3, 1).unwrap();
        let xs = [0.1, 0.2, 0.3];
        let p = predict_with_memory(&MemoryModule::default(), &model, &xs).unwrap();
        assert_eq!(p.source, PredictionSource::Model);
        assert_eq!(p.value, model.forward(&xs).unwrap().clamp(0.0, 1.0));
    }

    #[test]
    fn perturbed_window_misses_memory() {
        let model = BiLstmModel::init(3, 3, 1).unwrap();
        let mut mem = MemoryModule::default();
        mem.insert(&[0.1, 0.2, 0.3], 0.42);
        // 2e-4 is two quantization steps away
        let p = predict_with_memory(&mem, &model, &[0.1, 0.2, 0.3002]).unwrap();
        assert_eq!(p.source, PredictionSource::Model);
    }

    #[test]
    fn shape_error_on_wrong_length() {
        let model = BiLstmModel::init(3, 3, 1).unwrap();
        assert!(matches!(
            predict_with_memory(&MemoryModule::default(), &model, &[0.1]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn below_threshold_leaves_memory() {
        let mut mem = MemoryModule::default();
        // 3 Kbps error with a 1000 Kbps span
        let out = memory_update(&mut mem, &[0.5], 0.203, 0.2, 5.0, &scaler());
        assert!(mem.is_empty());
        assert_eq!(out, 0.203);
    }

    #[test]
    fn above_threshold_stores_desired() {
        let mut mem = MemoryModule::default();
        let out = memory_update(&mut mem, &[0.5], 0.21, 0.2, 5.0, &scaler());
        assert_eq!(out, 0.2);
        assert_eq!(mem.lookup(&[0.5]), Some(0.2));
        let model = BiLstmModel::init(3, 1, 0).unwrap();
        let p = predict_with_memory(&mem, &model, &[0.5]).unwrap();
        assert_eq!((p.value, p.source), (0.2, PredictionSource::Memory));
    }

    #[test]
    fn evaluate_all_cached_is_exact() {
        let model = BiLstmModel::init(3, 2, 0).unwrap();
        let windows = WindowSet {
            seq_len: 2,
            inputs: vec![vec![0.1, 0.2], vec![0.2, 0.7]],
            targets: vec![0.7, 0.3],
        };
        let mut mem = MemoryModule::default();
        for (xs, y) in windows.pairs() {
            mem.insert(xs, y);
        }
        let m = evaluate(&model, &mem, &windows, &scaler()).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.memory_hits, 2);
    }

    #[test]
    fn evaluate_zero_model_matches_direct_sum() {
        let model = BiLstmModel::zeros(3, 2).unwrap();
        let sc = Scaler::new(100.0, 500.0).unwrap();
        let windows = WindowSet {
            seq_len: 2,
            inputs: vec![vec![0.1, 0.2], vec![0.2, 0.7], vec![0.7, 0.25]],
            targets: vec![0.7, 0.25, 1.0],
        };
        let m = evaluate(&model, &MemoryModule::default(), &windows, &sc).unwrap();
        // zero output denormalizes to b_min = 100
        let expected = [380.0 - 100.0, 200.0 - 100.0, 500.0 - 100.0];
        let mae = expected.iter().sum::<f64>() / 3.0;
        assert!((m.mae - mae).abs() < 1e-9);
    }

    #[test]
    fn bundle_roundtrip() {
        let mut b = PredictorBundle::new(BiLstmModel::init(4, 3, 7).unwrap(), scaler());
        b.memory.insert(&[0.1, 0.2, 0.3], 0.5);
        b.memory.insert(&[0.3, 0.2, 0.1], 0.25);
        b.loss_history = vec![0.1, 0.05];
        let back = PredictorBundle::from_json(&b.to_json().unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn truncated_bundle_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.json");
        let b = PredictorBundle::new(BiLstmModel::init(2, 3, 7).unwrap(), scaler());
        let text = b.to_json().unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(PredictorBundle::load(&path), Err(Error::Io { .. })));
        assert!(matches!(
            PredictorBundle::load(&dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }
}
