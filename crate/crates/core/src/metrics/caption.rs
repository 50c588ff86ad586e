//! Sentence-level captioning metrics and the overlap-gated corpus scorer.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_videos, metric_tokens, tiou};
use crate::submission::Submission;
use crate::Result;

type Tokens = Vec<String>;

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// BLEU with up to 4-grams, clipped counts over all references and the
/// brevity penalty taken from the reference length closest to the candidate
/// (shorter wins ties). An order with no clipped match contributes
/// `1 / (candidate n-grams + 1)` instead of zero.
pub fn bleu4(candidate: &[String], references: &[Tokens]) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let p = if clipped == 0 { 1.0 / (total as f64 + 1.0) } else { clipped as f64 / total as f64 };
        log_sum += libm::log(p);
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c >= r { 1.0 } else { libm::exp(1.0 - r as f64 / c as f64) };
    bp * libm::exp(log_sum / 4.0)
}

/// Unigram-matching sentence score without lexical resources. Candidate
/// words are aligned left to right to the first unused identical reference
/// word. With `m` matches the harmonic mean `10PR / (R + 9P)` is scaled by
/// `1 - 0.5 * frag^3`, where `frag = (chunks - 1) / (m - 1)` and a chunk is a
/// run of matches adjacent in both sentences. Best over references.
pub fn meteor_lite(candidate: &[String], references: &[Tokens]) -> f64 {
    references.iter().map(|r| meteor_single(candidate, r)).fold(0.0, f64::max)
}

fn meteor_single(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut used = alloc::vec![false; reference.len()];
    let mut align: Vec<(usize, usize)> = Vec::new();
    for (i, w) in cand.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *w) {
            used[j] = true;
            align.push((i, j));
        }
    }
    let m = align.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let chunks = 1 + align.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let frag = if m > 1 { (chunks - 1) as f64 / (m - 1) as f64 } else { 0.0 };
    fmean * (1.0 - 0.5 * frag * frag * frag)
}

/// TF-IDF cosine consensus over 1- to 4-grams. Document frequency counts,
/// for each n-gram, the documents (reference groups) that contain it in at
/// least one reference.
#[derive(Debug, Clone)]
pub struct CiderScorer {
    df: BTreeMap<Tokens, usize>,
    log_docs: f64,
}

impl CiderScorer {
    pub fn new<'a>(documents: impl IntoIterator<Item = &'a [Tokens]>) -> Self {
        let mut df: BTreeMap<Tokens, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in documents {
            n_docs += 1;
            let mut seen: alloc::collections::BTreeSet<&[String]> = alloc::collections::BTreeSet::new();
            for r in doc {
                for n in 1..=4 {
                    seen.extend(ngram_counts(r, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g.to_vec()).or_insert(0) += 1;
            }
        }
        Self { df, log_docs: libm::log(n_docs.max(1) as f64) }
    }

    fn vector<'s>(&self, tokens: &'s [String], n: usize) -> (BTreeMap<&'s [String], f64>, f64) {
        let counts = ngram_counts(tokens, n);
        let total: usize = counts.values().sum();
        let mut norm = 0.0;
        let vec: BTreeMap<&[String], f64> = counts
            .into_iter()
            .map(|(g, c)| {
                let df = self.df.get(g).copied().unwrap_or(0).max(1) as f64;
                let w = c as f64 / total as f64 * (self.log_docs - libm::log(df));
                norm += w * w;
                (g, w)
            })
            .collect();
        (vec, libm::sqrt(norm))
    }

    /// Mean over n of the mean cosine similarity to each reference.
    pub fn score(&self, candidate: &[String], references: &[Tokens]) -> f64 {
        if candidate.is_empty() || references.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for n in 1..=4 {
            let (c, cn) = self.vector(candidate, n);
            let mut sim = 0.0;
            for r in references {
                let (rv, rn) = self.vector(r, n);
                if cn > 0.0 && rn > 0.0 {
                    let dot: f64 = c.iter().filter_map(|(g, w)| rv.get(g).map(|x| w * x)).sum();
                    sim += dot / (cn * rn);
                }
            }
            total += sim / references.len() as f64;
        }
        total / 4.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionScores {
    pub bleu4: f64,
    pub meteor_lite: f64,
    pub cider: f64,
}

/// Each prediction is scored against every reference sentence (from any
/// reference set) whose event overlaps it with tIoU at or above `threshold`;
/// without such a reference it scores zero. Scores are averaged over a
/// video's predictions, then over videos that have predictions. Redundant
/// or missing events are not penalised.
pub fn captioning_at_tiou(sub: &Submission, refs: &[Submission], threshold: f64) -> Result<CaptionScores> {
    check_videos(sub, refs)?;
    struct Item {
        video: usize,
        cand: Tokens,
        refs: Vec<Tokens>,
    }
    let mut items = Vec::new();
    let mut n_videos = 0;
    for (v, preds) in sub.results.iter().filter(|(_, p)| !p.is_empty()) {
        for p in preds {
            let mut matched = Vec::new();
            for set in refs {
                for g in set.get(v) {
                    if tiou(p.interval(), g.interval()) >= threshold {
                        matched.push(metric_tokens(&g.sentence));
                    }
                }
            }
            items.push(Item { video: n_videos, cand: metric_tokens(&p.sentence), refs: matched });
        }
        n_videos += 1;
    }
    if n_videos == 0 {
        return Ok(CaptionScores::default());
    }
    let cider = CiderScorer::new(items.iter().filter(|i| !i.refs.is_empty()).map(|i| i.refs.as_slice()));
    let mut per_video = alloc::vec![(CaptionScores::default(), 0usize); n_videos];
    for it in &items {
        let (acc, count) = &mut per_video[it.video];
        *count += 1;
        if it.refs.is_empty() {
            continue;
        }
        acc.bleu4 += bleu4(&it.cand, &it.refs);
        acc.meteor_lite += meteor_lite(&it.cand, &it.refs);
        acc.cider += cider.score(&it.cand, &it.refs);
    }
    let mut out = CaptionScores::default();
    for (acc, count) in &per_video {
        let c = *count as f64;
        out.bleu4 += acc.bleu4 / c;
        out.meteor_lite += acc.meteor_lite / c;
        out.cider += acc.cider / c;
    }
    let n = n_videos as f64;
    Ok(CaptionScores { bleu4: out.bleu4 / n, meteor_lite: out.meteor_lite / n, cider: out.cider / n })
}
