//! Discrete-time link with an injectable capacity schedule, a rate shaper
//! and throughput measurement. One step is one second.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub kbps: f64,
}

/// Piecewise-constant link capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationSchedule {
    pub total_steps: usize,
    pub segments: Vec<Segment>,
}

impl VariationSchedule {
    pub fn new(total_steps: usize, segments: Vec<Segment>) -> Result<Self> {
        let s = Self {
            total_steps,
            segments,
        };
        s.validate()?;
        Ok(s)
    }

    /// Consecutive `(kbps, duration)` blocks starting at step 0.
    pub fn from_blocks(blocks: &[(f64, usize)]) -> Result<Self> {
        let mut segments = Vec::with_capacity(blocks.len());
        let mut start = 0;
        for &(kbps, len) in blocks {
            if len == 0 {
                return Err(Error::param("schedule blocks must have a positive length"));
            }
            segments.push(Segment { start, kbps });
            start += len;
        }
        Self::new(start, segments)
    }

    pub fn constant(kbps: f64, total_steps: usize) -> Result<Self> {
        Self::from_blocks(&[(kbps, total_steps)])
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::param("schedule has no segments"))?;
        if first.start != 0 {
            return Err(Error::param("schedule must start at step 0"));
        }
        if self.segments.windows(2).any(|w| w[1].start <= w[0].start) {
            return Err(Error::param("segment starts must be strictly increasing"));
        }
        if self.segments.iter().any(|s| !(s.kbps > 0.0)) {
            return Err(Error::param("segment capacities must be > 0"));
        }
        if self.segments.last().unwrap().start >= self.total_steps {
            return Err(Error::param("last segment starts beyond total_steps"));
        }
        Ok(())
    }

    pub fn capacity_at(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::Index {
                index: step,
                len: self.total_steps,
            });
        }
        let i = self.segments.partition_point(|s| s.start <= step) - 1;
        Ok(self.segments[i].kbps)
    }

    /// Capacity for every step.
    pub fn capacities(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_steps);
        for (i, seg) in self.segments.iter().enumerate() {
            let end = self
                .segments
                .get(i + 1)
                .map_or(self.total_steps, |next| next.start);
            out.extend(std::iter::repeat_n(seg.kbps, end - seg.start));
        }
        out
    }

    /// `[start, end)` ranges of segments whose capacity equals `kbps`.
    pub fn segment_ranges(&self, kbps: f64) -> Vec<(usize, usize)> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| (s.kbps - kbps).abs() < 1e-9)
            .map(|(i, s)| {
                let end = self
                    .segments
                    .get(i + 1)
                    .map_or(self.total_steps, |next| next.start);
                (s.start, end)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::param(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self =
            serde_json::from_str(text).map_err(|e| Error::param(format!("schedule: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShaperConfig {
    Unlimited,
    Rate(f64),
}

impl ShaperConfig {
    pub fn rate(kbps: f64) -> Result<Self> {
        if !(kbps > 0.0) {
            return Err(Error::param("shaper rate must be > 0"));
        }
        Ok(ShaperConfig::Rate(kbps))
    }

    pub fn apply(&self, offered: f64) -> f64 {
        match *self {
            ShaperConfig::Unlimited => offered,
            ShaperConfig::Rate(r) => offered.min(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    /// Fraction of capacity lost per unit of relative overload.
    pub congestion_beta: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            congestion_beta: 0.25,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.congestion_beta) {
            return Err(Error::param("congestion_beta must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub offered: f64,
    pub shaped: f64,
    pub capacity: f64,
    pub achieved: f64,
}

/// Shapes the offered load and pushes it through the link. Traffic above
/// capacity collapses goodput to `capacity * (1 - beta * overload)`.
pub fn step(offered: f64, shaper: ShaperConfig, capacity: f64, link: &LinkModel) -> StepResult {
    let offered = offered.max(0.0);
    let shaped = shaper.apply(offered);
    let achieved = if shaped <= capacity {
        shaped
    } else {
        let overload = (shaped - capacity) / shaped;
        capacity * (1.0 - link.congestion_beta * overload)
    };
    StepResult {
        offered,
        shaped,
        capacity,
        achieved,
    }
}

/// Mean achieved throughput over the last `window` results.
pub fn measure_throughput(results: &[StepResult], window: usize) -> Result<f64> {
    if window == 0 || window > results.len() {
        return Err(Error::InsufficientData(format!(
            "window {} over {} results",
            window,
            results.len()
        )));
    }
    let tail = &results[results.len() - window..];
    Ok(tail.iter().map(|r| r.achieved).sum::<f64>() / window as f64)
}

pub fn results_to_csv(results: &[StepResult]) -> String {
    let mut out = String::from("step,offered,shaped,capacity,achieved\n");
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            i, r.offered, r.shaped, r.capacity, r.achieved
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_segments() -> VariationSchedule {
        VariationSchedule::new(
            80,
            vec![Segment { start: 0, kbps: 400.0 }, Segment { start: 40, kbps: 250.0 }],
        )
        .unwrap()
    }

    #[test]
    fn capacity_boundaries() {
        let s = two_segments();
        assert_eq!(s.capacity_at(39).unwrap(), 400.0);
        assert_eq!(s.capacity_at(40).unwrap(), 250.0);
        assert!(matches!(s.capacity_at(80), Err(Error::Index { .. })));
        let c = VariationSchedule::constant(300.0, 5).unwrap();
        assert!(c.capacities().iter().all(|v| *v == 300.0));
    }

    #[test]
    fn invalid_schedules() {
        assert!(VariationSchedule::new(10, vec![Segment { start: 1, kbps: 1.0 }]).is_err());
        assert!(VariationSchedule::new(10, vec![Segment { start: 0, kbps: 0.0 }]).is_err());
        assert!(VariationSchedule::new(
            10,
            vec![Segment { start: 0, kbps: 1.0 }, Segment { start: 0, kbps: 2.0 }]
        )
        .is_err());
    }

    #[test]
    fn step_examples() {
        let link = LinkModel::default();
        let r = step(300.0, ShaperConfig::Rate(250.0), 280.0, &link);
        assert_eq!(r.achieved, 250.0);
        let r = step(300.0, ShaperConfig::Unlimited, 200.0, &link);
        let expected = 200.0 * (1.0 - 0.25 / 3.0);
        assert!((r.achieved - expected).abs() < 1e-12);
        assert!((r.achieved - 183.333).abs() < 1e-3);
        assert_eq!(step(0.0, ShaperConfig::Unlimited, 100.0, &link).achieved, 0.0);
    }

    #[test]
    fn throughput_window() {
        let mk = |a: f64| StepResult { offered: a, shaped: a, capacity: a, achieved: a };
        assert_eq!(measure_throughput(&[mk(250.0); 4], 4).unwrap(), 250.0);
        assert_eq!(measure_throughput(&[mk(100.0), mk(300.0)], 2).unwrap(), 200.0);
        assert!(measure_throughput(&[mk(1.0)], 2).is_err());
    }

    #[test]
    fn schedule_json_roundtrip() {
        let s = two_segments();
        assert_eq!(VariationSchedule::from_json(&s.to_json().unwrap()).unwrap(), s);
        let parsed = VariationSchedule::from_json(
            r#"{"total_steps": 20, "segments": [{"start": 0, "kbps": 300}, {"start": 10, "kbps": 150}]}"#,
        )
        .unwrap();
        assert_eq!(parsed.capacities()[10], 150.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn achieved_bounded(offered in 0.0f64..2000.0, rate in 1.0f64..2000.0,
                                cap in 1.0f64..2000.0, beta in 0.0f64..0.99) {
                let link = LinkModel { congestion_beta: beta };
                let r = step(offered, ShaperConfig::Rate(rate), cap, &link);
                prop_assert!(r.achieved >= 0.0);
                prop_assert!(r.achieved <= r.capacity + 1e-9);
                prop_assert!(r.achieved <= r.shaped + 1e-9);
                if r.shaped <= cap {
                    prop_assert_eq!(r.achieved, r.shaped);
                }
            }

            #[test]
            fn shaping_toward_capacity_helps(cap in 10.0f64..1000.0, excess in 1.0f64..1000.0,
                                             f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
                // two shaper rates between capacity and the offered load
                let link = LinkModel::default();
                let offered = cap + excess;
                let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
                prop_assume!(hi - lo > 1e-6);
                let r_lo = cap + lo * excess;
                let r_hi = cap + hi * excess;
                let a_lo = step(offered, ShaperConfig::Rate(r_lo), cap, &link).achieved;
                let a_hi = step(offered, ShaperConfig::Rate(r_hi), cap, &link).achieved;
                prop_assert!(a_lo > a_hi);
                let a_cap = step(offered, ShaperConfig::Rate(cap), cap, &link).achieved;
                prop_assert!(a_cap >= a_lo);
            }
        }
    }
}
