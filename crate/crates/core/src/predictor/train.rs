use serde::{Deserialize, Serialize};

use super::lstm::BiLstmModel;
use crate::error::{Error, Result};
use crate::traffic::WindowSet;

/// Optimizer and schedule for [`train`]. The loss is always mean squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 1e-3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be >= 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::param(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon must be > 0"));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Minibatch Adam over the windows in their stored order. Returns the trained
/// model and the mean training MSE of each epoch.
pub fn train(
    model: &BiLstmModel,
    windows: &WindowSet,
    cfg: &TrainConfig,
) -> Result<(BiLstmModel, Vec<f64>)> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    if windows.seq_len != model.seq_len {
        return Err(Error::Shape {
            expected: model.seq_len,
            actual: windows.seq_len,
        });
    }
    let mut model = model.clone();
    let mut params = model.flatten();
    let mut adam = Adam::new(params.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    let pairs: Vec<(&[f64], f64)> = windows.pairs().collect();

    for _ in 0..cfg.epochs {
        let mut sum = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let (loss, grad) = model.loss_and_grad(batch.iter().copied())?;
            sum += loss * batch.len() as f64;
            adam.step(&mut params, &grad.flatten(), cfg);
            model.assign(&params)?;
        }
        history.push(sum / pairs.len() as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::{windowize, NormalizedSeries};

    fn toy_windows() -> WindowSet {
        let values = (0..40).map(|i| ((i as f64) * 0.7).sin() * 0.5 + 0.5).collect();
        windowize(&NormalizedSeries { values }, 4).unwrap()
    }

    #[test]
    fn zero_epochs_rejected() {
        let m = BiLstmModel::init(3, 4, 0).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(train(&m, &toy_windows(), &cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn empty_dataset_rejected() {
        let m = BiLstmModel::init(3, 4, 0).unwrap();
        let empty = WindowSet { seq_len: 4, inputs: vec![], targets: vec![] };
        assert!(matches!(
            train(&m, &empty, &TrainConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn loss_decreases_on_smooth_signal() {
        let m = BiLstmModel::init(6, 4, 3).unwrap();
        let cfg = TrainConfig { epochs: 60, learning_rate: 1e-2, batch_size: 8, ..Default::default() };
        let (_, hist) = train(&m, &toy_windows(), &cfg).unwrap();
        assert!(hist.last().unwrap() < &(hist[0] * 0.5), "{:?}", hist);
    }

    #[test]
    fn training_is_deterministic() {
        let m = BiLstmModel::init(4, 4, 3).unwrap();
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let a = train(&m, &toy_windows(), &cfg).unwrap();
        let b = train(&m, &toy_windows(), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
