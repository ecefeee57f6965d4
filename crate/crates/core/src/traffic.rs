//! Synthetic end-to-end bandwidth traffic.
//!
//! Transmission counts per time step are Poisson distributed; each count is
//! scaled by a per-transmission unit size to give a bandwidth level in Kbps.
//! The series is Min-Max normalized and cut into sliding windows for the
//! sequence predictor.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sim_rng;

/// Rates above this use a normal approximation instead of sequential search.
const INVERSION_MAX_LAMBDA: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficParams {
    /// Mean transmission count per step.
    pub lambda: f64,
    /// Kbps carried by one transmission.
    pub unit_size: f64,
    /// Number of time steps.
    pub length: usize,
    pub seed: u64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self {
            lambda: 4.0,
            unit_size: 100.0,
            length: 1800,
            seed: 1,
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.unit_size > 0.0) || !self.unit_size.is_finite() {
            return Err(Error::param(format!(
                "unit_size must be > 0, got {}",
                self.unit_size
            )));
        }
        if self.length == 0 {
            return Err(Error::param("length must be >= 1"));
        }
        Ok(())
    }
}

/// Time-indexed bandwidth values in Kbps, one per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSeries {
    pub values: Vec<f64>,
}

impl BandwidthSeries {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Splits into `[0, at)` and `[at, len)`.
    pub fn split_at(&self, at: usize) -> (BandwidthSeries, BandwidthSeries) {
        let at = at.min(self.values.len());
        (
            BandwidthSeries::new(self.values[..at].to_vec()),
            BandwidthSeries::new(self.values[at..].to_vec()),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,kbps\n");
        for (t, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", t + 1, v));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("t,kbps") => {}
            other => {
                return Err(Error::param(format!(
                    "expected `t,kbps` header, found {:?}",
                    other
                )))
            }
        }
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let kbps = line
                .split(',')
                .nth(1)
                .ok_or_else(|| Error::param(format!("line {}: missing kbps column", i + 2)))?;
            let v: f64 = kbps
                .trim()
                .parse()
                .map_err(|e| Error::param(format!("line {}: {}", i + 2, e)))?;
            if v < 0.0 {
                return Err(Error::param(format!("line {}: negative bandwidth", i + 2)));
            }
            values.push(v);
        }
        Ok(Self { values })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Draws one Poisson(`lambda`) variate by sequential search over the CDF.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!("lambda must be >= 0, got {}", lambda)));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    if lambda > INVERSION_MAX_LAMBDA {
        // Box-Muller normal approximation, rounded and clipped at zero.
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        return Ok((lambda + z * lambda.sqrt()).round().max(0.0) as u64);
    }
    let u: f64 = rng.gen();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        // Guard against rounding leaving the cumulative sum just under u.
        if p < 1e-300 {
            break;
        }
    }
    Ok(k)
}

/// Per-step Poisson bandwidth series: `b_t = count_t * unit_size`.
pub fn generate_series(params: &TrafficParams) -> Result<BandwidthSeries> {
    params.validate()?;
    let mut rng = sim_rng(params.seed);
    let values = (0..params.length)
        .map(|_| sample_poisson(params.lambda, &mut rng).map(|c| c as f64 * params.unit_size))
        .collect::<Result<Vec<_>>>()?;
    Ok(BandwidthSeries { values })
}

/// Piecewise-constant capacity trace: levels drawn uniformly from a grid and
/// held for a random dwell. This is the telemetry the twin's predictor learns
/// persistence from; i.i.d. Poisson samples carry no temporal structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauParams {
    /// Candidate levels in Kbps.
    pub levels: Vec<f64>,
    pub min_dwell: usize,
    pub max_dwell: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for PlateauParams {
    fn default() -> Self {
        Self {
            levels: (1..=10).map(|k| k as f64 * 50.0).collect(),
            min_dwell: 20,
            max_dwell: 80,
            length: 1800,
            seed: 1,
        }
    }
}

impl PlateauParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels.len() < 2 {
            return Err(Error::param("plateau series needs at least two levels"));
        }
        if self.levels.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::param("plateau levels must be finite and >= 0"));
        }
        if self.min_dwell == 0 || self.max_dwell < self.min_dwell {
            return Err(Error::param(format!(
                "dwell range must satisfy 1 <= min <= max, got {}..={}",
                self.min_dwell, self.max_dwell
            )));
        }
        if self.length == 0 {
            return Err(Error::param("length must be >= 1"));
        }
        Ok(())
    }
}

/// Consecutive plateaus always differ.
pub fn generate_plateau_series(params: &PlateauParams) -> Result<BandwidthSeries> {
    params.validate()?;
    let mut rng = sim_rng(params.seed);
    let n = params.levels.len();
    let mut values = Vec::with_capacity(params.length);
    let mut last = n;
    while values.len() < params.length {
        let mut k = rng.gen_range(0..n);
        while k == last {
            k = rng.gen_range(0..n);
        }
        last = k;
        let dwell = rng.gen_range(params.min_dwell..=params.max_dwell);
        let room = params.length - values.len();
        values.extend(std::iter::repeat_n(params.levels[k], dwell.min(room)));
    }
    Ok(BandwidthSeries { values })
}

/// Min-Max scaling bounds in Kbps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub b_min: f64,
    pub b_max: f64,
}

impl Scaler {
    pub fn new(b_min: f64, b_max: f64) -> Result<Self> {
        if !(b_max > b_min) {
            return Err(Error::DegenerateRange(b_min));
        }
        Ok(Self { b_min, b_max })
    }

    pub fn span(&self) -> f64 {
        self.b_max - self.b_min
    }

    /// Normalizes a raw value, clamped into `[0, 1]`.
    pub fn transform(&self, kbps: f64) -> f64 {
        ((kbps - self.b_min) / self.span()).clamp(0.0, 1.0)
    }

    pub fn inverse(&self, x: f64) -> f64 {
        x * self.span() + self.b_min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub values: Vec<f64>,
}

impl NormalizedSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fits a scaler on `series` and returns the normalized values.
pub fn fit_normalize(series: &BandwidthSeries) -> Result<(NormalizedSeries, Scaler)> {
    if series.is_empty() {
        return Err(Error::InsufficientData("cannot normalize an empty series".into()));
    }
    let b_min = series.values.iter().copied().fold(f64::INFINITY, f64::min);
    let b_max = series.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaler = Scaler::new(b_min, b_max)?;
    Ok((normalize_with(series, &scaler), scaler))
}

/// Normalizes with an existing scaler. Values outside the fitted range clamp.
pub fn normalize_with(series: &BandwidthSeries, scaler: &Scaler) -> NormalizedSeries {
    NormalizedSeries {
        values: series.values.iter().map(|&b| scaler.transform(b)).collect(),
    }
}

pub fn inverse_normalize(values: &[f64], scaler: &Scaler) -> BandwidthSeries {
    BandwidthSeries {
        values: values.iter().map(|&x| scaler.inverse(x)).collect(),
    }
}

/// Sliding-window pairs `(x_t..x_{t+L-1}, x_{t+L})`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub seq_len: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.inputs
            .iter()
            .map(Vec::as_slice)
            .zip(self.targets.iter().copied())
    }
}

pub fn windowize(series: &NormalizedSeries, seq_len: usize) -> Result<WindowSet> {
    if seq_len == 0 {
        return Err(Error::param("sequence length must be >= 1"));
    }
    let n = series.len();
    if n <= seq_len {
        return Err(Error::InsufficientData(format!(
            "series of length {} cannot form windows of length {}",
            n, seq_len
        )));
    }
    let inputs = series
        .values
        .windows(seq_len)
        .take(n - seq_len)
        .map(<[f64]>::to_vec)
        .collect();
    let targets = series.values[seq_len..].to_vec();
    Ok(WindowSet {
        seq_len,
        inputs,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> BandwidthSeries {
        BandwidthSeries::new(v.to_vec())
    }

    #[test]
    fn zero_rate_always_zero() {
        let mut rng = sim_rng(3);
        for _ in 0..1000 {
            assert_eq!(sample_poisson(0.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn negative_rate_is_rejected() {
        let mut rng = sim_rng(3);
        assert!(matches!(sample_poisson(-1.0, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_probability_matches_pmf() {
        let mut rng = sim_rng(11);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| sample_poisson(5.0, &mut rng).unwrap() == 0)
            .count();
        let p = zeros as f64 / n as f64;
        assert!((p - (-5.0f64).exp()).abs() < 0.002, "P(T=0) = {}", p);
    }

    #[test]
    fn sample_mean_matches_rate() {
        let mut rng = sim_rng(12);
        let n = 100_000;
        let sum: u64 = (0..n).map(|_| sample_poisson(4.0, &mut rng).unwrap()).sum();
        let mean = sum as f64 / n as f64;
        assert!((mean - 4.0).abs() < 0.05, "mean = {}", mean);
    }

    #[test]
    fn series_values_are_unit_multiples() {
        let params = TrafficParams {
            lambda: 4.0,
            unit_size: 100.0,
            length: 1800,
            seed: 5,
        };
        let s = generate_series(&params).unwrap();
        assert_eq!(s.len(), 1800);
        assert!(s.values.iter().all(|v| *v >= 0.0 && (v / 100.0).fract() == 0.0));
        assert!((s.mean() - 400.0).abs() < 10.0, "mean = {}", s.mean());
    }

    #[test]
    fn single_step_series() {
        let params = TrafficParams {
            length: 1,
            ..TrafficParams::default()
        };
        assert_eq!(generate_series(&params).unwrap().len(), 1);
    }

    #[test]
    fn series_is_reproducible() {
        let params = TrafficParams::default();
        assert_eq!(generate_series(&params).unwrap(), generate_series(&params).unwrap());
    }

    #[test]
    fn invalid_params_rejected() {
        for p in [
            TrafficParams { lambda: -0.5, ..Default::default() },
            TrafficParams { unit_size: 0.0, ..Default::default() },
            TrafficParams { length: 0, ..Default::default() },
        ] {
            assert!(generate_series(&p).is_err());
        }
    }

    #[test]
    fn plateau_series_has_plateaus() {
        let params = PlateauParams { length: 500, min_dwell: 5, max_dwell: 12, ..Default::default() };
        let s = generate_plateau_series(&params).unwrap();
        assert_eq!(s.len(), 500);
        let changes = s.values.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(changes <= 500 / 5);
        assert!(s.values.iter().all(|v| params.levels.contains(v)));
        assert_eq!(s, generate_plateau_series(&params).unwrap());
    }

    #[test]
    fn plateau_params_validated() {
        let bad = [
            PlateauParams { levels: vec![50.0], ..Default::default() },
            PlateauParams { min_dwell: 0, ..Default::default() },
            PlateauParams { min_dwell: 9, max_dwell: 3, ..Default::default() },
            PlateauParams { length: 0, ..Default::default() },
        ];
        for p in bad {
            assert!(generate_plateau_series(&p).is_err());
        }
    }

    #[test]
    fn normalize_endpoints() {
        let (x, scaler) = fit_normalize(&series(&[100.0, 200.0, 300.0])).unwrap();
        assert_eq!(x.values, vec![0.0, 0.5, 1.0]);
        assert_eq!(scaler, Scaler { b_min: 100.0, b_max: 300.0 });
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            fit_normalize(&series(&[50.0, 50.0, 50.0])),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn inverse_points() {
        let scaler = Scaler::new(100.0, 300.0).unwrap();
        let b = inverse_normalize(&[0.0, 1.0, 0.5], &scaler);
        assert_eq!(b.values, vec![100.0, 300.0, 200.0]);
    }

    #[test]
    fn window_counts_and_contents() {
        let n = NormalizedSeries { values: (0..12).map(|i| i as f64 / 11.0).collect() };
        assert_eq!(windowize(&n, 9).unwrap().len(), 3);

        let abcd = NormalizedSeries { values: vec![0.1, 0.2, 0.3, 0.4] };
        let w = windowize(&abcd, 3).unwrap();
        assert_eq!(w.inputs, vec![vec![0.1, 0.2, 0.3]]);
        assert_eq!(w.targets, vec![0.4]);

        let nine = NormalizedSeries { values: vec![0.5; 9] };
        assert!(matches!(windowize(&nine, 9), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn csv_roundtrip() {
        let s = series(&[0.0, 100.0, 300.0]);
        assert_eq!(BandwidthSeries::from_csv(&s.to_csv()).unwrap(), s);
        assert!(BandwidthSeries::from_csv("a,b\n1,2\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fit_then_inverse_is_identity(vals in prop::collection::vec(0u32..5000, 2..200)) {
                let raw: Vec<f64> = vals.iter().map(|&v| v as f64 * 10.0).collect();
                prop_assume!(raw.iter().any(|&v| v != raw[0]));
                let s = BandwidthSeries::new(raw.clone());
                let (x, scaler) = fit_normalize(&s).unwrap();
                prop_assert!(x.values.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!(x.values.contains(&0.0) && x.values.contains(&1.0));
                let back = inverse_normalize(&x.values, &scaler);
                for (a, b) in back.values.iter().zip(&raw) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }

            #[test]
            fn window_count_is_n_minus_l(n in 2usize..300, l in 1usize..50) {
                prop_assume!(n > l);
                let s = NormalizedSeries { values: vec![0.25; n] };
                let w = windowize(&s, l).unwrap();
                prop_assert_eq!(w.len(), n - l);
                prop_assert!(w.inputs.iter().all(|x| x.len() == l));
            }
        }
    }
}
