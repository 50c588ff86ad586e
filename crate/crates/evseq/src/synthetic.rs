//! Synthetic untrimmed videos: ordered activity segments over background,
//! features built from a fixed projection of each frame's activity, and
//! captions drawn from per-activity templates.

use std::collections::BTreeMap;

use evseq_core::numerics::Tensor;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::formats::{AnnotationEntry, AnnotationFile, FeatureMap};
use crate::{Error, Result};

pub const ACTIVITIES: [&str; 16] = [
    "chopping", "washing", "stirring", "peeling", "pouring", "mixing", "frying", "slicing", "rinsing", "grating",
    "kneading", "boiling", "whisking", "baking", "draining", "rolling",
];

/// Default templates; `{}` is replaced by the activity. Apart from the
/// activity every word is a function word, so the concept vocabulary of a
/// synthetic corpus is exactly its activity names.
pub const DEFAULT_TEMPLATES: [&str; 2] = ["he is {} it", "then she starts {} again"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    /// Trailing videos written to the validation split.
    pub holdout: usize,
    pub n_frames: usize,
    pub feature_dim: usize,
    pub n_activities: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub min_event_frames: usize,
    pub max_event_frames: usize,
    /// Background frames kept between consecutive events.
    pub min_gap: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub noise_std: f64,
    /// Activity name → templates. Empty means the default grammar.
    pub grammar: BTreeMap<String, Vec<String>>,
    /// Place events independently, allowing overlap.
    pub overlap: bool,
    /// Boundary jitter of the second validation reference set, in frames.
    pub reference_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_videos: 60,
            holdout: 12,
            n_frames: 32,
            feature_dim: 16,
            n_activities: 8,
            min_events: 1,
            max_events: 4,
            min_event_frames: 3,
            max_event_frames: 10,
            min_gap: 1,
            min_duration: 20.0,
            max_duration: 120.0,
            noise_std: 0.1,
            grammar: BTreeMap::new(),
            overlap: false,
            reference_jitter: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("data.synthetic: {m}")));
        if self.n_videos == 0 || self.holdout > self.n_videos {
            return bad(format!("holdout {} of {} videos", self.holdout, self.n_videos));
        }
        if self.n_frames == 0 || self.feature_dim == 0 {
            return bad("n_frames and feature_dim must be positive".into());
        }
        if self.min_events == 0 || self.min_events > self.max_events {
            return bad(format!("events per video range {}..={}", self.min_events, self.max_events));
        }
        if self.min_event_frames == 0 || self.min_event_frames > self.max_event_frames {
            return bad(format!("event length range {}..={}", self.min_event_frames, self.max_event_frames));
        }
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration) {
            return bad(format!("duration range {}..{}", self.min_duration, self.max_duration));
        }
        if !(self.noise_std >= 0.0 && self.reference_jitter >= 0.0) {
            return bad("noise_std and reference_jitter must be non-negative".into());
        }
        let needed = self.max_events * self.min_event_frames + (self.max_events - 1) * self.min_gap;
        if !self.overlap && needed > self.n_frames {
            return bad(format!("{} events need {needed} frames but videos have {}", self.max_events, self.n_frames));
        }
        let grammar = self.grammar();
        if grammar.is_empty() || grammar.values().any(|t| t.is_empty() || t.iter().any(|s| s.trim().is_empty())) {
            return bad("every activity needs at least one non-empty template".into());
        }
        Ok(())
    }

    /// Activity → templates in use.
    pub fn grammar(&self) -> BTreeMap<String, Vec<String>> {
        if !self.grammar.is_empty() {
            return self.grammar.clone();
        }
        ACTIVITIES
            .iter()
            .take(self.n_activities.min(ACTIVITIES.len()))
            .map(|a| (a.to_string(), DEFAULT_TEMPLATES.iter().map(|t| t.to_string()).collect()))
            .collect()
    }

    pub fn activities(&self) -> Vec<String> {
        self.grammar().into_keys().collect()
    }
}

/// Generated corpus: annotation splits and features for every video.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: AnnotationFile,
    pub val: AnnotationFile,
    /// Same validation events with jittered boundaries and re-drawn captions.
    pub val_alt: AnnotationFile,
    pub features: FeatureMap,
    /// Latent activity of each event, in annotation order.
    pub latent: BTreeMap<String, Vec<String>>,
}

fn render(template: &str, activity: &str) -> String {
    if template.contains("{}") {
        template.replace("{}", activity)
    } else {
        format!("{template} {activity}")
    }
}

/// Frame runs `[first, last]` for one video, ordered by start.
fn place_events(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let n = spec.n_frames;
    let m = rng.random_range(spec.min_events..=spec.max_events);
    let max_len = spec.max_event_frames.min(n);
    if spec.overlap {
        let mut runs: Vec<(usize, usize)> = (0..m)
            .map(|_| {
                let len = rng.random_range(spec.min_event_frames.min(n)..=max_len);
                let first = rng.random_range(0..=n - len);
                (first, first + len - 1)
            })
            .collect();
        runs.sort();
        return Ok(runs);
    }
    let gaps = (m - 1) * spec.min_gap;
    let mut lens: Vec<usize> = (0..m).map(|_| rng.random_range(spec.min_event_frames..=max_len)).collect();
    // shrink the longest runs until the packing fits
    while lens.iter().sum::<usize>() + gaps > n {
        let i = (0..m).max_by_key(|&i| (lens[i], std::cmp::Reverse(i))).expect("m >= 1");
        if lens[i] <= spec.min_event_frames {
            return Err(Error::Config(format!("cannot pack {m} events into {n} frames")));
        }
        lens[i] -= 1;
    }
    let free = n - lens.iter().sum::<usize>() - gaps;
    // split the free frames over m + 1 slots
    let mut cuts: Vec<usize> = (0..m).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut runs = Vec::with_capacity(m);
    let (mut pos, mut prev) = (0usize, 0usize);
    for (i, len) in lens.iter().enumerate() {
        pos += cuts[i] - prev;
        prev = cuts[i];
        runs.push((pos, pos + len - 1));
        pos += len + spec.min_gap;
    }
    Ok(runs)
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let grammar = spec.grammar();
    let activities: Vec<&String> = grammar.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // one fixed unit direction per activity
    let projection: Vec<Vec<f64>> = (0..activities.len())
        .map(|_| {
            let v: Vec<f64> = (0..spec.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let (mut train, mut val, mut val_alt) = (AnnotationFile::new(), AnnotationFile::new(), AnnotationFile::new());
    let mut features = FeatureMap::new();
    let mut latent = BTreeMap::new();
    let width = spec.n_videos.to_string().len().max(4);
    for i in 0..spec.n_videos {
        let id = format!("v{i:0width$}");
        let n = spec.n_frames;
        let duration = rng.random_range(spec.min_duration..=spec.max_duration);
        let span = duration / n as f64;
        let runs = place_events(spec, &mut rng)?;
        let acts: Vec<usize> = runs.iter().map(|_| rng.random_range(0..activities.len())).collect();

        let mut data = vec![0.0; n * spec.feature_dim];
        for (&(a, b), &act) in runs.iter().zip(&acts) {
            for t in a..=b {
                for (x, p) in data[t * spec.feature_dim..(t + 1) * spec.feature_dim].iter_mut().zip(&projection[act]) {
                    *x += p;
                }
            }
        }
        if spec.noise_std > 0.0 {
            data.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
        }
        features.insert(id.clone(), Tensor::matrix(n, spec.feature_dim, data)?);

        let caption = |act: usize, rng: &mut ChaCha8Rng| {
            let name = activities[act];
            render(grammar[name].choose(rng).expect("validated non-empty"), name)
        };
        let entry = AnnotationEntry {
            duration,
            timestamps: runs.iter().map(|&(a, b)| [a as f64 * span, ((b + 1) as f64 * span).min(duration)]).collect(),
            sentences: acts.iter().map(|&a| caption(a, &mut rng)).collect(),
        };
        latent.insert(id.clone(), acts.iter().map(|&a| activities[a].clone()).collect());
        if i + spec.holdout >= spec.n_videos {
            let j = spec.reference_jitter * span;
            let jitter = |x: f64, rng: &mut ChaCha8Rng| {
                if j > 0.0 {
                    (x + rng.random_range(-j..=j)).clamp(0.0, duration)
                } else {
                    x
                }
            };
            let alt = AnnotationEntry {
                duration,
                timestamps: entry
                    .timestamps
                    .iter()
                    .map(|t| {
                        let (s, e) = (jitter(t[0], &mut rng), jitter(t[1], &mut rng));
                        [s.min(e), s.max(e)]
                    })
                    .collect(),
                sentences: acts.iter().map(|&a| caption(a, &mut rng)).collect(),
            };
            val_alt.videos.insert(id.clone(), alt);
            val.videos.insert(id, entry);
        } else {
            train.videos.insert(id, entry);
        }
    }
    Ok(SyntheticCorpus { train, val, val_alt, features, latent })
}
