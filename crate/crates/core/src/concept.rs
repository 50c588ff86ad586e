//! Per-frame semantic concept features from a bidirectional LSTM trained as
//! a multi-label concept classifier with an auxiliary boundary head.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::VideoRecord;
use crate::event_codec;
use crate::model::Linear;
use crate::numerics::{Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use crate::text::tokenize;
use crate::train::{self, LossRecord, StepOutput, Task, TrainConfig, Trainable};
use crate::{Error, Result};

pub const STAGE_CPT: u64 = 4;

/// Words never treated as concepts: pronouns, determiners, prepositions,
/// conjunctions, auxiliaries and light verbs.
const FUNCTION_WORDS: &[&str] = &[
    "a", "about", "above", "across", "after", "again", "all", "also", "an", "and", "another", "any", "are", "around",
    "as", "at", "back", "be", "been", "before", "begins", "behind", "being", "below", "between", "both", "but", "by",
    "can", "continues", "could", "did", "do", "does", "doing", "down", "during", "each", "either", "every", "few",
    "for", "from", "goes", "going", "had", "has", "have", "having", "he", "her", "here", "hers", "herself", "him",
    "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "keeps", "many", "may",
    "me", "might", "more", "most", "much", "must", "my", "near", "next", "no", "nor", "not", "now", "of", "off", "on",
    "once", "one", "only", "onto", "or", "other", "our", "out", "over", "own", "same", "several", "she", "should",
    "so", "some", "starts", "still", "such", "than", "that", "the", "their", "them", "themselves", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "toward", "two", "under", "until", "up", "upon", "us",
    "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
    "within", "without", "would", "you", "your",
];

/// Rule tagger: a token is a noun or verb unless it is a function word, an
/// `-ly` adverb, a number, or punctuation.
pub fn is_content_word(token: &str) -> bool {
    token.chars().any(char::is_alphabetic)
        && !token.chars().all(|c| c.is_ascii_digit())
        && !(token.len() > 4 && token.ends_with("ly"))
        && FUNCTION_WORDS.binary_search(&token).is_err()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptVocab {
    pub labels: Vec<String>,
}

impl ConceptVocab {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Concept indices mentioned by a sentence.
    pub fn concepts_in(&self, sentence: &str) -> BTreeSet<usize> {
        let toks: BTreeSet<String> = tokenize(sentence).into_iter().collect();
        self.labels.iter().enumerate().filter(|(_, l)| toks.contains(*l)).map(|(i, _)| i).collect()
    }
}

/// The `k` most frequent content words, ties broken lexicographically.
pub fn build_concept_vocab<'a>(captions: impl IntoIterator<Item = &'a str>, k: usize) -> Result<ConceptVocab> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in captions {
        for t in tokenize(c).into_iter().filter(|t| is_content_word(t)) {
            *counts.entry(t).or_default() += 1;
        }
    }
    if k == 0 || k > counts.len() {
        return Err(Error::Config(alloc::format!("concept vocabulary of {k} from {} candidate words", counts.len())));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ConceptVocab { labels: ranked.into_iter().take(k).map(|(w, _)| w).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    Start = 0,
    Middle = 1,
    End = 2,
    Outside = 3,
}

/// Per-frame supervision for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct CptTargets {
    /// N × K indicator rows.
    pub concepts: Vec<Vec<bool>>,
    pub boundary: Vec<Boundary>,
}

/// Concept `k` is on at frame `t` iff an event containing `t` has a caption
/// mentioning `k`. A frame that starts any event is a start; otherwise one
/// that ends an event is an end; any other covered frame is a middle.
pub fn cpt_targets(record: &VideoRecord, vocab: &ConceptVocab) -> Result<CptTargets> {
    let n = record.frames();
    let mut concepts = alloc::vec![alloc::vec![false; vocab.len()]; n];
    let mut boundary = alloc::vec![Boundary::Outside; n];
    let rank = |t: usize, b: Boundary, boundary: &mut Vec<Boundary>| {
        let order = |x: Boundary| match x {
            Boundary::Start => 3,
            Boundary::End => 2,
            Boundary::Middle => 1,
            Boundary::Outside => 0,
        };
        if order(b) > order(boundary[t]) {
            boundary[t] = b;
        }
    };
    for (iv, sentence) in record.events.iter().zip(&record.sentences) {
        let e = event_codec::encode(*iv, record.duration, n)?;
        let (first, last) = (e.first_one().ok_or(Error::NoEvent)?, e.last_one().ok_or(Error::NoEvent)?);
        let ks = vocab.concepts_in(sentence);
        for t in first..=last {
            for &k in &ks {
                concepts[t][k] = true;
            }
            let b = if t == first {
                Boundary::Start
            } else if t == last {
                Boundary::End
            } else {
                Boundary::Middle
            };
            rank(t, b, &mut boundary);
        }
    }
    Ok(CptTargets { concepts, boundary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CptConfig {
    /// Recurrent width per direction; the concept feature is twice this.
    pub width: usize,
    pub concepts: usize,
}

impl Default for CptConfig {
    fn default() -> Self {
        Self { width: 32, concepts: 8 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Lstm {
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
}

impl Lstm {
    fn new(store: &mut ParamStore, name: &str, input_dim: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = store.add_glorot(&alloc::format!("{name}.input"), input_dim, 4 * width, rng);
        let recurrent = store.add_glorot(&alloc::format!("{name}.recurrent"), width, 4 * width, rng);
        // gates ordered input, forget, cell, output; forget starts open
        let mut b = alloc::vec![0.0; 4 * width];
        b[width..2 * width].iter_mut().for_each(|x| *x = 1.0);
        let bias = store.add(&alloc::format!("{name}.bias"), Tensor::matrix(1, 4 * width, b).unwrap());
        Self { input, recurrent, bias }
    }

    /// Hidden states for each time step of `xs` (each B × D), in input order.
    fn run(&self, g: &mut Graph, store: &ParamStore, xs: &[Var], width: usize, reverse: bool) -> Vec<Var> {
        let w = g.param(store, self.input);
        let u = g.param(store, self.recurrent);
        let b = g.param(store, self.bias);
        let batch = g.value(xs[0]).rows();
        let mut h = g.constant(Tensor::zeros(batch, width));
        let mut c = g.constant(Tensor::zeros(batch, width));
        let mut out = alloc::vec![h; xs.len()];
        let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            let xw = g.matmul(xs[t], w);
            let hu = g.matmul(h, u);
            let z = g.add(xw, hu);
            let z = g.add_row(z, b);
            let i = g.slice_cols(z, 0, width);
            let i = g.sigmoid(i);
            let f = g.slice_cols(z, width, width);
            let f = g.sigmoid(f);
            let cand = g.slice_cols(z, 2 * width, width);
            let cand = g.tanh(cand);
            let o = g.slice_cols(z, 3 * width, width);
            let o = g.sigmoid(o);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
            out[t] = h;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CptModel {
    pub config: CptConfig,
    pub input_dim: usize,
    pub params: ParamStore,
    forward: Lstm,
    backward: Lstm,
    concept_head: Linear,
    boundary_head: Linear,
}

impl Trainable for CptModel {
    fn store(&self) -> &ParamStore {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl CptModel {
    pub fn new(config: CptConfig, input_dim: usize, seed: u64) -> Result<Self> {
        if config.width == 0 || config.concepts == 0 || input_dim == 0 {
            return Err(Error::Config("cpt width, concept count and input dim must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let w = config.width;
        let forward = Lstm::new(&mut s, "cpt.forward", input_dim, w, &mut rng);
        let backward = Lstm::new(&mut s, "cpt.backward", input_dim, w, &mut rng);
        let concept_head = Linear::new(&mut s, "cpt.concept", 2 * w, config.concepts, &mut rng);
        let boundary_head = Linear::new(&mut s, "cpt.boundary", 2 * w, 4, &mut rng);
        Ok(Self { config, input_dim, params: s, forward, backward, concept_head, boundary_head })
    }

    pub fn from_params(config: CptConfig, input_dim: usize, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, input_dim, 0)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.config.width
    }

    /// Concatenated forward/backward states, time-major: row `t·B + b`.
    fn encode(&self, g: &mut Graph, videos: &[&Tensor]) -> Result<Var> {
        let n = videos[0].rows();
        if videos.iter().any(|v| v.rows() != n || v.cols() != self.input_dim) {
            return Err(Error::ShapeMismatch(alloc::format!("cpt batch needs {} × {} inputs", n, self.input_dim)));
        }
        if n == 0 {
            return Err(Error::NoFrames);
        }
        let xs: Vec<Var> = (0..n)
            .map(|t| {
                let data = videos.iter().flat_map(|v| v.row(t).iter().copied()).collect();
                g.constant(Tensor::matrix(videos.len(), self.input_dim, data).unwrap())
            })
            .collect();
        let w = self.config.width;
        let fw = self.forward.run(g, &self.params, &xs, w, false);
        let bw = self.backward.run(g, &self.params, &xs, w, true);
        let steps: Vec<Var> = fw.iter().zip(&bw).map(|(&f, &b)| g.concat_cols(&[f, b])).collect();
        Ok(g.concat_rows(&steps))
    }

    /// Concept and boundary losses for a batch of equal-length videos, each
    /// averaged over frames.
    pub fn losses(&self, g: &mut Graph, videos: &[&Tensor], targets: &[&CptTargets]) -> Result<(Var, Var)> {
        let h = self.encode(g, videos)?;
        let n = videos[0].rows();
        let k = self.config.concepts;
        let (mut ct, mut bt) = (Vec::with_capacity(n * videos.len() * k), Vec::with_capacity(n * videos.len()));
        for t in 0..n {
            for tg in targets {
                ct.extend(tg.concepts[t].iter().map(|&b| if b { 1.0 } else { 0.0 }));
                bt.push(tg.boundary[t] as usize);
            }
        }
        let frames = (n * videos.len()) as f64;
        let cl = self.concept_head.forward(g, &self.params, h);
        let concept = g.bce_with_logits(cl, &ct, &alloc::vec![1.0; ct.len()], frames);
        let bl = self.boundary_head.forward(g, &self.params, h);
        let boundary = g.cross_entropy(bl, &bt, frames);
        Ok((concept, boundary))
    }

    /// N × 2·width concept features for one video.
    pub fn extract(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let h = self.encode(&mut g, &[features])?;
        Ok(g.value(h).clone())
    }

    /// Per-frame concept probabilities and boundary predictions.
    pub fn predict(&self, features: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let mut g = Graph::new();
        let h = self.encode(&mut g, &[features])?;
        let cl = self.concept_head.forward(&mut g, &self.params, h);
        let cp = g.sigmoid(cl);
        let bl = self.boundary_head.forward(&mut g, &self.params, h);
        let b = g.value(bl);
        let labels = (0..b.rows())
            .map(|r| b.row(r).iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &z)| if z > a.1 { (i, z) } else { a }).0)
            .collect();
        Ok((g.value(cp).clone(), labels))
    }
}

/// Trains on `(features, targets)` pairs; each batch holds videos of one
/// frame count.
pub fn train_cpt(
    model: &mut CptModel,
    data: &[(Tensor, CptTargets)],
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<LossRecord>> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (f, _)) in data.iter().enumerate() {
        groups.entry(f.rows()).or_default().push(i);
    }
    let step = |m: &CptModel, _: usize, rng: &mut ChaCha8Rng| -> Result<StepOutput> {
        let anchor = rng.random_range(0..data.len());
        let group = &groups[&data[anchor].0.rows()];
        let picks: Vec<usize> = (0..config.batch_size).map(|_| group[rng.random_range(0..group.len())]).collect();
        let feats: Vec<&Tensor> = picks.iter().map(|&i| &data[i].0).collect();
        let tgts: Vec<&CptTargets> = picks.iter().map(|&i| &data[i].1).collect();
        let mut g = Graph::new();
        let (c, b) = m.losses(&mut g, &feats, &tgts)?;
        let (cv, bv) = (g.value(c).item(), g.value(b).item());
        let total = g.add(c, b);
        let grads: Gradients = g.param_grads(total, &m.params)?;
        Ok(StepOutput { grads, losses: alloc::vec![(Task::Concept, cv), (Task::Boundary, bv)] })
    };
    train::run(model, config, seed, STAGE_CPT, step, |_, _| Ok(()))
}

/// Micro-averaged per-frame concept F1 at 0.5 and boundary accuracy.
pub fn evaluate_cpt(model: &CptModel, data: &[(Tensor, CptTargets)]) -> Result<(f64, f64)> {
    let (mut tp, mut fp, mut fneg, mut correct, mut frames) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (f, t) in data {
        let (probs, labels) = model.predict(f)?;
        for r in 0..f.rows() {
            for (k, &on) in t.concepts[r].iter().enumerate() {
                match (probs.get(r, k) > 0.5, on) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            correct += usize::from(labels[r] == t.boundary[r] as usize);
            frames += 1;
        }
    }
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64 };
    Ok((f1, correct as f64 / frames.max(1) as f64))
}
