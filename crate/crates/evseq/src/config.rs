//! Run configuration: one JSON document with a section per concern, plus
//! `section.key=value` overrides from the command line.

use std::path::Path;

use evseq_core::concept::CptConfig;
use evseq_core::generation::DecodeConfig;
use evseq_core::metrics::{InnerMetric, DETECTION_THRESHOLDS};
use evseq_core::model::ModelConfig;
use evseq_core::robustness::PerturbConfig;
use evseq_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::synthetic::SyntheticSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Run seed; `--seed` overrides it.
    pub seed: u64,
    pub pretrain: TrainConfig,
    pub ed: TrainConfig,
    pub ec: TrainConfig,
    pub cpt: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            seed: 0,
            pretrain: TrainConfig::default(),
            ed: TrainConfig { lr: 2e-3, ..TrainConfig::default() },
            ec: TrainConfig { lr: 2e-3, ..TrainConfig::default() },
            cpt: TrainConfig { steps: 200, batch_size: 8, lr: 5e-3, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub synthetic: SyntheticSpec,
    /// Tokens seen fewer times in training captions map to `[UNK]`.
    pub min_freq: usize,
    pub cpt: CptConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { synthetic: SyntheticSpec::default(), min_freq: 1, cpt: CptConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub tiou_thresholds: Vec<f64>,
    pub caption_tiou: f64,
    pub inner: InnerMetric,
    pub perturb: PerturbConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            tiou_thresholds: DETECTION_THRESHOLDS.to_vec(),
            caption_tiou: evseq_core::metrics::CAPTION_TIOU,
            inner: InnerMetric::MeteorLite,
            perturb: PerturbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSection,
    pub decode: DecodeConfig,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        crate::formats::read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for t in [&self.train.pretrain, &self.train.ed, &self.train.ec, &self.train.cpt] {
            t.validate()?;
        }
        self.decode.validate()?;
        self.data.synthetic.validate()?;
        self.eval.perturb.validate()?;
        if self.eval.tiou_thresholds.is_empty() || self.eval.tiou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("eval.tiou_thresholds must be a non-empty list in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.caption_tiou) {
            return Err(Error::Config("eval.caption_tiou must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Applies `a.b.c=value` overrides. The value is parsed as JSON when it
    /// parses, otherwise taken as a string. The key must already exist.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).expect("config serialises");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut doc;
            for part in key.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| Error::Config(format!("unknown config key {key}")))?;
            }
            *node = value;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::default()
            .with_overrides(&["train.pretrain.lambda=0.5", "model.hidden=32", "eval.inner=cider", "data.synthetic.seed=4"])
            .unwrap();
        assert_eq!(c.train.pretrain.lambda, 0.5);
        assert_eq!(c.model.hidden, 32);
        assert_eq!(c.eval.inner, InnerMetric::Cider);
        assert_eq!(c.data.synthetic.seed, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::default().with_overrides(&["model.hiden=3"]).is_err());
        assert!(RunConfig::default().with_overrides(&["model.hidden"]).is_err());
        assert!(RunConfig::default().with_overrides(&["model.hidden=\"wide\""]).is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{"model":{"depth":2}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn default_round_trips_and_validates() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
