//! Dense-captioning evaluation: temporal overlap, detection precision/recall,
//! event diversity, sentence metrics, overlap-gated captioning scores and
//! order-preserving story matching.
//!
//! Reference annotations are passed as one or more [`Submission`]s, one per
//! independent reference set. A submitted video id that no reference set
//! knows is an error; reference videos missing from a submission count as
//! having no predictions.

mod caption;
mod soda;

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use caption::{bleu4, captioning_at_tiou, meteor_lite, CaptionScores, CiderScorer};
pub use soda::{order_preserving_max, soda, InnerMetric, SodaMode, SodaReport, SodaScore};

use crate::event_codec::TimeInterval;
use crate::submission::{Prediction, Submission};
use crate::text::tokenize;
use crate::{Error, Result};

pub const DETECTION_THRESHOLDS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];
pub const CAPTION_TIOU: f64 = 0.9;

/// Temporal intersection over union.
pub fn tiou(a: TimeInterval, b: TimeInterval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.end.max(b.end) - a.start.min(b.start);
    if union > 0.0 {
        inter / union
    } else if a.start == b.start {
        // two identical points
        1.0
    } else {
        0.0
    }
}

/// Lowercased word tokens with punctuation dropped.
pub fn metric_tokens(sentence: &str) -> Vec<String> {
    tokenize(sentence).into_iter().filter(|t| t.chars().any(char::is_alphanumeric)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScore {
    pub tiou: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Recall and precision are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub thresholds: Vec<ThresholdScore>,
    pub avg_recall: f64,
    pub avg_precision: f64,
    pub self_tiou: f64,
    pub events_per_video: f64,
}

pub(crate) fn reference_videos(refs: &[Submission]) -> BTreeSet<&str> {
    refs.iter().flat_map(Submission::videos).collect()
}

pub(crate) fn check_videos<'a>(sub: &Submission, refs: &'a [Submission]) -> Result<BTreeSet<&'a str>> {
    let videos = reference_videos(refs);
    if videos.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(v) = sub.videos().find(|v| !videos.contains(v)) {
        return Err(Error::UnknownVideo(v.to_string()));
    }
    Ok(videos)
}

/// Any-match detection scores. At each threshold a reference event counts as
/// recalled if some prediction overlaps it with tIoU at or above the
/// threshold, and a prediction counts as precise if it overlaps some
/// reference event that well. Each video takes its best reference set; the
/// corpus score is the mean over reference videos.
pub fn detection_pr(sub: &Submission, refs: &[Submission], thresholds: &[f64]) -> Result<DetectionReport> {
    let videos = check_videos(sub, refs)?;
    let mut scores = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let (mut recall, mut precision) = (0.0, 0.0);
        for v in &videos {
            let preds = sub.get(v);
            let (mut best_r, mut best_p) = (0.0f64, 0.0f64);
            for set in refs.iter().filter(|r| r.contains(v)) {
                let gt = set.get(v);
                let mut gt_hit = alloc::vec![false; gt.len()];
                let mut pred_hit = alloc::vec![false; preds.len()];
                for (i, p) in preds.iter().enumerate() {
                    for (j, g) in gt.iter().enumerate() {
                        if tiou(p.interval(), g.interval()) >= t {
                            pred_hit[i] = true;
                            gt_hit[j] = true;
                        }
                    }
                }
                if !gt.is_empty() {
                    best_r = best_r.max(fraction(&gt_hit));
                }
                if !preds.is_empty() {
                    best_p = best_p.max(fraction(&pred_hit));
                }
            }
            recall += best_r;
            precision += best_p;
        }
        let n = videos.len() as f64;
        scores.push(ThresholdScore { tiou: t, recall: 100.0 * recall / n, precision: 100.0 * precision / n });
    }
    let k = scores.len().max(1) as f64;
    Ok(DetectionReport {
        avg_recall: scores.iter().map(|s| s.recall).sum::<f64>() / k,
        avg_precision: scores.iter().map(|s| s.precision).sum::<f64>() / k,
        thresholds: scores,
        self_tiou: self_tiou(sub),
        events_per_video: videos.iter().map(|v| sub.get(v).len() as f64).sum::<f64>() / videos.len() as f64,
    })
}

fn fraction(hits: &[bool]) -> f64 {
    hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
}

/// Mean pairwise tIoU within one video's events; 0 with fewer than two.
pub fn video_self_tiou(events: &[Prediction]) -> f64 {
    let n = events.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += tiou(events[i].interval(), events[j].interval());
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Per-video self-tIoU averaged over the submission's videos.
pub fn self_tiou(sub: &Submission) -> f64 {
    if sub.results.is_empty() {
        return 0.0;
    }
    sub.results.values().map(|p| video_self_tiou(p)).sum::<f64>() / sub.results.len() as f64
}

/// Dense baseline: `count` windows of `width × duration`, evenly spaced
/// from the start of the video to its end.
pub fn sliding_windows(duration: f64, count: usize, width: f64) -> Vec<Prediction> {
    let len = width.clamp(0.0, 1.0) * duration;
    let stride = if count > 1 { (duration - len) / (count - 1) as f64 } else { 0.0 };
    (0..count).map(|i| Prediction::new(i as f64 * stride, i as f64 * stride + len, "")).collect()
}

#[cfg(test)]
mod tests;
