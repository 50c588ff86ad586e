//! Per-video timestamped sentence lists, used both for model output and for
//! reference annotations.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::event_codec::TimeInterval;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub sentence: String,
    pub timestamp: [f64; 2],
}

impl Prediction {
    pub fn new(start: f64, end: f64, sentence: impl Into<String>) -> Self {
        Self { sentence: sentence.into(), timestamp: [start, end] }
    }

    pub fn interval(&self) -> TimeInterval {
        TimeInterval { start: self.timestamp[0], end: self.timestamp[1] }
    }

    pub fn start(&self) -> f64 {
        self.timestamp[0]
    }

    pub fn end(&self) -> f64 {
        self.timestamp[1]
    }
}

/// Predictions keyed by video id. A reference set has the same shape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub results: BTreeMap<String, Vec<Prediction>>,
}

impl Submission {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, video_id: impl Into<String>, predictions: Vec<Prediction>) {
        self.results.insert(video_id.into(), predictions);
    }

    /// Predictions for a video; empty if absent.
    pub fn get(&self, video_id: &str) -> &[Prediction] {
        self.results.get(video_id).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, video_id: &str) -> bool {
        self.results.contains_key(video_id)
    }

    pub fn videos(&self) -> impl Iterator<Item = &str> {
        self.results.keys().map(String::as_str)
    }

    pub fn num_predictions(&self) -> usize {
        self.results.values().map(Vec::len).sum()
    }

    /// Rejects non-finite, negative or reversed timestamps.
    pub fn validate(&self) -> Result<()> {
        for preds in self.results.values() {
            for p in preds {
                let [s, e] = p.timestamp;
                if !(s.is_finite() && e.is_finite() && 0.0 <= s && s <= e) {
                    return Err(Error::InvalidInterval { start: s, end: e, duration: f64::INFINITY });
                }
            }
        }
        Ok(())
    }

    /// Copy with each video's predictions in temporal order (start, then end).
    pub fn sorted(&self) -> Self {
        let mut out = self.clone();
        for preds in out.results.values_mut() {
            sort_temporal(preds);
        }
        out
    }
}

pub fn sort_temporal(preds: &mut [Prediction]) {
    preds.sort_by(|a, b| a.start().total_cmp(&b.start()).then(a.end().total_cmp(&b.end())));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_orders_by_start_then_end() {
        let mut s = Submission::new();
        s.insert("v", alloc::vec![Prediction::new(3.0, 4.0, "b"), Prediction::new(1.0, 5.0, "c"), Prediction::new(1.0, 2.0, "a")]);
        let sorted = s.sorted();
        let order: Vec<&str> = sorted.get("v").iter().map(|p| p.sentence.as_str()).collect();
        assert_eq!(order, ["a", "c", "b"]);
        assert!(s.get("missing").is_empty());
    }

    #[test]
    fn validate_rejects_reversed() {
        let mut s = Submission::new();
        s.insert("v", alloc::vec![Prediction::new(3.0, 2.0, "x")]);
        assert!(s.validate().is_err());
    }
}
