//! Adverse edits of a submission and the metric audit built on them.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{self, InnerMetric, SodaMode, CAPTION_TIOU, DETECTION_THRESHOLDS};
use crate::submission::{sort_temporal, Prediction, Submission};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Original,
    /// Duplicate the first event of a video with probability `p_increase`.
    Increase,
    /// Drop every event after the first, each with probability `p_reduce`.
    Reduce,
    /// `Increase` followed by `Reduce`.
    Exchange,
    /// Keep only the first event.
    Extreme,
}

impl Operation {
    pub const ALL: [Operation; 5] =
        [Operation::Original, Operation::Increase, Operation::Reduce, Operation::Exchange, Operation::Extreme];

    pub fn name(self) -> &'static str {
        match self {
            Operation::Original => "original",
            Operation::Increase => "increase",
            Operation::Reduce => "reduce",
            Operation::Exchange => "exchange",
            Operation::Extreme => "extreme",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Operation::Increase | Operation::Reduce | Operation::Exchange)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub p_increase: f64,
    pub p_reduce: f64,
    pub seeds: Vec<u64>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { p_increase: 0.4, p_reduce: 0.15, seeds: alloc::vec![0, 1, 2] }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_increase", self.p_increase), ("p_reduce", self.p_reduce)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(alloc::format!("{name} {p} not in [0, 1]")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("audit needs at least one seed".into()));
        }
        Ok(())
    }
}

/// Applies `op` to every video. Events are put in temporal order first, so
/// "first" means earliest; videos without events pass through.
pub fn perturb<R: Rng>(sub: &Submission, op: Operation, config: &PerturbConfig, rng: &mut R) -> Submission {
    let mut out = sub.clone();
    for preds in out.results.values_mut() {
        if preds.is_empty() {
            continue;
        }
        sort_temporal(preds);
        let increase = |preds: &mut Vec<Prediction>, rng: &mut R| {
            if rng.random_bool(config.p_increase) {
                let first = preds[0].clone();
                preds.insert(1, first);
            }
        };
        let reduce = |preds: &mut Vec<Prediction>, rng: &mut R| {
            let mut i = 0;
            preds.retain(|_| {
                i += 1;
                i == 1 || !rng.random_bool(config.p_reduce)
            });
        };
        match op {
            Operation::Original => {}
            Operation::Increase => increase(preds, rng),
            Operation::Reduce => reduce(preds, rng),
            Operation::Exchange => {
                increase(preds, rng);
                reduce(preds, rng);
            }
            Operation::Extreme => preds.truncate(1),
        }
    }
    out
}

/// One audit cell set; every value is a percentage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditMetrics {
    pub avg_recall: f64,
    pub avg_precision: f64,
    pub bleu4: f64,
    pub cider: f64,
    pub meteor_lite: f64,
    pub soda_old: f64,
    pub soda_mr: f64,
}

impl AuditMetrics {
    pub const COLUMNS: [&'static str; 7] =
        ["avg_recall", "avg_precision", "bleu4", "cider", "meteor_lite", "soda_old", "soda_mr"];

    pub fn values(&self) -> [f64; 7] {
        [self.avg_recall, self.avg_precision, self.bleu4, self.cider, self.meteor_lite, self.soda_old, self.soda_mr]
    }

    fn from_values(v: [f64; 7]) -> Self {
        Self {
            avg_recall: v[0],
            avg_precision: v[1],
            bleu4: v[2],
            cider: v[3],
            meteor_lite: v[4],
            soda_old: v[5],
            soda_mr: v[6],
        }
    }

    fn mean(items: &[AuditMetrics]) -> Self {
        let mut acc = [0.0; 7];
        for m in items {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        Self::from_values(acc.map(|a| a / items.len() as f64))
    }

    fn minus(&self, other: &AuditMetrics) -> Self {
        let (a, b) = (self.values(), other.values());
        Self::from_values(core::array::from_fn(|i| a[i] - b[i]))
    }
}

/// Evaluates a submission with every audited metric.
pub fn evaluate_all(sub: &Submission, refs: &[Submission], inner: InnerMetric) -> Result<AuditMetrics> {
    let det = metrics::detection_pr(sub, refs, &DETECTION_THRESHOLDS)?;
    let cap = metrics::captioning_at_tiou(sub, refs, CAPTION_TIOU)?;
    let old = metrics::soda(sub, refs, inner, SodaMode::Old)?;
    let mr = metrics::soda(sub, refs, inner, SodaMode::Mr)?;
    Ok(AuditMetrics {
        avg_recall: det.avg_recall,
        avg_precision: det.avg_precision,
        bleu4: 100.0 * cap.bleu4,
        cider: 100.0 * cap.cider,
        meteor_lite: 100.0 * cap.meteor_lite,
        soda_old: 100.0 * old.f1,
        soda_mr: 100.0 * mr.f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub operation: Operation,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<AuditMetrics>,
    pub mean: AuditMetrics,
    /// `mean` minus the original row.
    pub delta: AuditMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: PerturbConfig,
    pub inner: InnerMetric,
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn row(&self, op: Operation) -> Option<&AuditRow> {
        self.rows.iter().find(|r| r.operation == op)
    }
}

fn rng_for(seed: u64, op: Operation) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(op as u64);
    rng
}

/// The original submission plus each operation, each random operation run
/// once per seed and averaged. The original row is always first.
pub fn audit(sub: &Submission, refs: &[Submission], ops: &[Operation], config: &PerturbConfig, inner: InnerMetric) -> Result<AuditReport> {
    config.validate()?;
    let original = evaluate_all(sub, refs, inner)?;
    let mut rows = alloc::vec![AuditRow {
        operation: Operation::Original,
        seeds: config.seeds.clone(),
        per_seed: alloc::vec![original; config.seeds.len()],
        mean: original,
        delta: AuditMetrics::default(),
    }];
    for &op in ops.iter().filter(|&&op| op != Operation::Original) {
        let per_seed = config
            .seeds
            .iter()
            .map(|&seed| evaluate_all(&perturb(sub, op, config, &mut rng_for(seed, op)), refs, inner))
            .collect::<Result<Vec<_>>>()?;
        let mean = AuditMetrics::mean(&per_seed);
        rows.push(AuditRow { operation: op, seeds: config.seeds.clone(), per_seed, mean, delta: mean.minus(&original) });
    }
    Ok(AuditReport { config: config.clone(), inner, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(n: usize) -> Vec<Prediction> {
        (0..n).rev().map(|i| Prediction::new(i as f64 * 10.0, i as f64 * 10.0 + 5.0, alloc::format!("event {i}"))).collect()
    }

    fn one(n: usize) -> Submission {
        let mut s = Submission::new();
        s.insert("v", video(n));
        s.insert("empty", Vec::new());
        s
    }

    #[test]
    fn extreme_keeps_the_earliest_event() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = perturb(&one(4), Operation::Extreme, &PerturbConfig::default(), &mut rng);
        assert_eq!(out.get("v"), &[Prediction::new(0.0, 5.0, "event 0")]);
        assert!(out.get("empty").is_empty());
    }

    #[test]
    fn forced_increase_duplicates_first() {
        let cfg = PerturbConfig { p_increase: 1.0, ..PerturbConfig::default() };
        let out = perturb(&one(3), Operation::Increase, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let v = out.get("v");
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].sentence, "event 0");
    }

    #[test]
    fn reduce_never_drops_first() {
        let cfg = PerturbConfig { p_reduce: 1.0, ..PerturbConfig::default() };
        for seed in 0..5 {
            let out = perturb(&one(5), Operation::Reduce, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(out.get("v"), &[Prediction::new(0.0, 5.0, "event 0")]);
        }
    }

    #[test]
    fn original_row_has_zero_delta() {
        let s = one(3);
        let refs = [s.clone()];
        let rep = audit(&s, &refs, &Operation::ALL, &PerturbConfig::default(), InnerMetric::MeteorLite).unwrap();
        assert_eq!(rep.rows.len(), 5);
        assert_eq!(rep.rows[0].delta, AuditMetrics::default());
        let ext = rep.row(Operation::Extreme).unwrap();
        assert!(ext.delta.avg_recall < 0.0);
        assert_eq!(ext.delta.avg_precision, 0.0);
    }
}
