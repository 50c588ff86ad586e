//! Story-oriented matching of generated and reference event sequences.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::caption::{meteor_lite, CiderScorer};
use super::{check_videos, metric_tokens, tiou};
use crate::submission::{sort_temporal, Prediction, Submission};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SodaMode {
    /// Each reference set scored on its own, then averaged.
    Old,
    /// All reference sets pooled into one candidate list.
    Mr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMetric {
    #[default]
    MeteorLite,
    Cider,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SodaScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SodaScore {
    fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SodaReport {
    pub mode: SodaMode,
    pub inner: InnerMetric,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_video: BTreeMap<String, SodaScore>,
}

/// Maximum total score of a one-to-one matching between rows and columns
/// of a row-major `rows × cols` score grid that preserves order on both
/// sides (no crossing pairs). Unmatched items contribute nothing.
pub fn order_preserving_max(scores: &[f64], rows: usize, cols: usize) -> f64 {
    debug_assert_eq!(scores.len(), rows * cols);
    let w = cols + 1;
    let mut dp = alloc::vec![0.0f64; (rows + 1) * w];
    for i in 1..=rows {
        for j in 1..=cols {
            let diag = dp[(i - 1) * w + j - 1] + scores[(i - 1) * cols + j - 1];
            dp[i * w + j] = dp[(i - 1) * w + j].max(dp[i * w + j - 1]).max(diag);
        }
    }
    dp[rows * w + cols]
}

struct Inner {
    metric: InnerMetric,
    cider: Option<CiderScorer>,
}

impl Inner {
    fn score(&self, cand: &[String], reference: &[String]) -> f64 {
        let refs = [reference.to_vec()];
        match (&self.cider, self.metric) {
            (Some(c), InnerMetric::Cider) => c.score(cand, &refs),
            _ => meteor_lite(cand, &refs),
        }
    }
}

struct RefEvent {
    pred: Prediction,
    sentences: Vec<Vec<String>>,
}

fn matched_sum(inner: &Inner, gen: &[(Prediction, Vec<String>)], refs: &[RefEvent]) -> f64 {
    let mut grid = Vec::with_capacity(gen.len() * refs.len());
    for (g, toks) in gen {
        for r in refs {
            let t = tiou(g.interval(), r.pred.interval());
            let s = if t > 0.0 { r.sentences.iter().map(|s| inner.score(toks, s)).fold(0.0, f64::max) * t } else { 0.0 };
            grid.push(s);
        }
    }
    order_preserving_max(&grid, gen.len(), refs.len())
}

/// Per (video, reference set), the best order-preserving one-to-one matching
/// of temporally sorted generated and reference events, with pair score
/// `inner(sentence) × tIoU`. Precision divides the matched sum by the number
/// of generated events and recall by the number of reference events.
///
/// In `Old` mode precision and recall are averaged over the reference sets
/// that contain the video. In `Mr` mode the reference sets are pooled: equal
/// intervals are merged with their sentences, a pair scores its best
/// sentence, and recall divides by the mean reference-set size. Per-video F1
/// is the harmonic mean of that video's precision and recall; corpus values
/// are means over reference videos.
pub fn soda(sub: &Submission, refs: &[Submission], inner: InnerMetric, mode: SodaMode) -> Result<SodaReport> {
    let videos = check_videos(sub, refs)?;
    let cider = (inner == InnerMetric::Cider).then(|| {
        let docs: Vec<Vec<Vec<String>>> = refs
            .iter()
            .flat_map(|r| r.results.values().flatten())
            .map(|p| alloc::vec![metric_tokens(&p.sentence)])
            .collect();
        CiderScorer::new(docs.iter().map(Vec::as_slice))
    });
    let scorer = Inner { metric: inner, cider };

    let mut per_video = BTreeMap::new();
    for v in &videos {
        let mut preds = sub.get(v).to_vec();
        sort_temporal(&mut preds);
        let gen: Vec<(Prediction, Vec<String>)> =
            preds.into_iter().map(|p| { let t = metric_tokens(&p.sentence); (p, t) }).collect();
        let sets: Vec<&[Prediction]> = refs.iter().filter(|r| r.contains(v)).map(|r| r.get(v)).collect();
        let score = if gen.is_empty() {
            SodaScore::default()
        } else {
            match mode {
                SodaMode::Old => {
                    let (mut p, mut r) = (0.0, 0.0);
                    for set in &sets {
                        let mut sorted = set.to_vec();
                        sort_temporal(&mut sorted);
                        let events: Vec<RefEvent> = sorted
                            .into_iter()
                            .map(|p| RefEvent { sentences: alloc::vec![metric_tokens(&p.sentence)], pred: p })
                            .collect();
                        let sum = matched_sum(&scorer, &gen, &events);
                        p += sum / gen.len() as f64;
                        if !events.is_empty() {
                            r += sum / events.len() as f64;
                        }
                    }
                    let k = sets.len() as f64;
                    SodaScore::new(p / k, r / k)
                }
                SodaMode::Mr => {
                    let mut pooled: Vec<RefEvent> = Vec::new();
                    for p in sets.iter().flat_map(|s| s.iter()) {
                        let toks = metric_tokens(&p.sentence);
                        match pooled.iter_mut().find(|e| e.pred.timestamp == p.timestamp) {
                            Some(e) => e.sentences.push(toks),
                            None => pooled.push(RefEvent { pred: p.clone(), sentences: alloc::vec![toks] }),
                        }
                    }
                    let mut order: Vec<usize> = (0..pooled.len()).collect();
                    order.sort_by(|&a, &b| {
                        let (x, y) = (&pooled[a].pred, &pooled[b].pred);
                        x.start().total_cmp(&y.start()).then(x.end().total_cmp(&y.end()))
                    });
                    let mut slots: Vec<Option<RefEvent>> = pooled.into_iter().map(Some).collect();
                    let pooled: Vec<RefEvent> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
                    let sum = matched_sum(&scorer, &gen, &pooled);
                    let mean_len = sets.iter().map(|s| s.len() as f64).sum::<f64>() / sets.len() as f64;
                    let r = if mean_len > 0.0 { sum / mean_len } else { 0.0 };
                    SodaScore::new(sum / gen.len() as f64, r)
                }
            }
        };
        per_video.insert(v.to_string(), score);
    }
    let n = per_video.len() as f64;
    let mean = |f: fn(&SodaScore) -> f64| per_video.values().map(f).sum::<f64>() / n;
    Ok(SodaReport {
        mode,
        inner,
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        per_video,
    })
}
