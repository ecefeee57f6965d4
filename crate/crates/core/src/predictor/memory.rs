//! Key-value memory of previously seen input windows and their corrected
//! next values.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

pub const DEFAULT_CAPACITY: usize = 4096;

/// Quantization applied to each element before building a key.
const KEY_SCALE: f64 = 1e4;

/// Canonical key for a normalized window: elements rounded to 4 decimals.
pub fn sequence_key(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{}", (x * KEY_SCALE).round() as i64))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub key: String,
    pub value: f64,
}

/// Bounded dictionary with FIFO eviction.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryModule {
    capacity: usize,
    values: HashMap<String, f64>,
    order: VecDeque<String>,
}

impl Default for MemoryModule {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }
}

impl MemoryModule {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            values: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lookup(&self, xs: &[f64]) -> Option<f64> {
        self.values.get(&sequence_key(xs)).copied()
    }

    pub fn contains(&self, xs: &[f64]) -> bool {
        self.values.contains_key(&sequence_key(xs))
    }

    /// Stores `value` (clamped to `[0, 1]`) for the window. Overwriting an
    /// existing key keeps its position in the eviction order.
    pub fn insert(&mut self, xs: &[f64], value: f64) {
        self.insert_key(sequence_key(xs), value);
    }

    pub(crate) fn insert_key(&mut self, key: String, value: f64) {
        let value = value.clamp(0.0, 1.0);
        if let Some(slot) = self.values.get_mut(&key) {
            *slot = value;
            return;
        }
        if self.values.len() == self.capacity {
            if let Some(oldest) = self.order.pop_front() {
                self.values.remove(&oldest);
            }
        }
        self.order.push_back(key.clone());
        self.values.insert(key, value);
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> Vec<MemoryEntry> {
        self.order
            .iter()
            .map(|k| MemoryEntry {
                key: k.clone(),
                value: self.values[k],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_rounds_to_four_places() {
        assert_eq!(sequence_key(&[0.12344, 1.0, 0.0]), "1234,10000,0");
        assert_eq!(sequence_key(&[0.12344]), sequence_key(&[0.123449]));
        assert_ne!(sequence_key(&[0.1234]), sequence_key(&[0.1236]));
    }

    #[test]
    fn lookup_returns_exact_value() {
        let mut m = MemoryModule::default();
        m.insert(&[0.1, 0.2], 0.42);
        assert_eq!(m.lookup(&[0.1, 0.2]), Some(0.42));
        assert_eq!(m.lookup(&[0.1, 0.3]), None);
    }

    #[test]
    fn fifo_eviction_respects_capacity() {
        let mut m = MemoryModule::with_capacity(3);
        for i in 0..5 {
            m.insert(&[i as f64 / 10.0], 0.5);
        }
        assert_eq!(m.len(), 3);
        assert!(!m.contains(&[0.0]) && !m.contains(&[0.1]));
        assert!(m.contains(&[0.4]));
    }

    #[test]
    fn overwrite_keeps_order() {
        let mut m = MemoryModule::with_capacity(2);
        m.insert(&[0.1], 0.1);
        m.insert(&[0.2], 0.2);
        m.insert(&[0.1], 0.9);
        m.insert(&[0.3], 0.3);
        // 0.1 was oldest despite the overwrite
        assert!(!m.contains(&[0.1]));
        assert_eq!(m.lookup(&[0.2]), Some(0.2));
    }
}
