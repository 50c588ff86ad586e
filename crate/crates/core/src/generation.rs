//! Left-to-right fine-tuning of the pre-trained model into an event
//! generator and a caption generator, and detect-then-describe inference.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedVideo;
use crate::event_codec::{self, EventSequence, EventVector, TimeInterval};
use crate::model::{build_caption_generation_mask, build_causal_mask, EventInput, Model, ModelInput, Stream};
use crate::numerics::{sigmoid, Gradients, Graph, Tensor, Var};
use crate::pretraining::{event_target, mask_events};
use crate::text::{Vocabulary, EOS, MASK, PAD, SOS, UNK};
use crate::train::{self, LossRecord, StepOutput, Task, TrainConfig};
use crate::{Error, Result};

pub const STAGE_ED: u64 = 2;
pub const STAGE_EC: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub frame_threshold: f64,
    pub stop_threshold: f64,
    pub max_events: usize,
    pub max_caption_len: usize,
    /// Draw frame bits from their Bernoulli probabilities instead of thresholding.
    pub sample_bits: bool,
    pub sample_seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            frame_threshold: 0.5,
            stop_threshold: 0.5,
            max_events: 8,
            max_caption_len: 14,
            sample_bits: false,
            sample_seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("frame_threshold", self.frame_threshold), ("stop_threshold", self.stop_threshold)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(alloc::format!("decode.{name} {v} not in (0, 1)")));
            }
        }
        if self.max_events == 0 || self.max_caption_len == 0 {
            return Err(Error::Config("decode limits must be at least 1".into()));
        }
        Ok(())
    }
}

// ---- event detection ----

/// Event slots for one training sample: real events with the selected ones
/// zeroed, followed by the zero stop slot.
#[derive(Debug, Clone, PartialEq)]
pub struct EdSample {
    pub video: usize,
    pub masked: Vec<usize>,
}

/// Loss of one event-generation sample: each masked event and the trailing
/// stop slot is predicted under the left-to-right event mask.
pub fn ed_loss(model: &Model, g: &mut Graph, video: &EncodedVideo, s: &EdSample, denom: f64) -> Result<Var> {
    let m = video.events.len();
    let mut events: Vec<EventInput> = video
        .events
        .iter()
        .enumerate()
        .map(|(j, e)| if s.masked.contains(&j) { EventInput::Masked } else { EventInput::Vector(e.clone()) })
        .collect();
    events.push(EventInput::Masked);
    let input = ModelInput { video: &video.features, events: &events, text: None };
    let layout = input.layout();
    let h = model.forward(g, &input, &build_causal_mask(&layout, Stream::Event), None)?;
    let mut slots = s.masked.clone();
    slots.push(m);
    let rows: Vec<usize> = slots.iter().map(|&j| layout.event_slot(j)).collect();
    let eh = g.gather_rows(h, &rows);
    let logits = model.event_logits(g, eh);
    let width = model.config.max_frames;
    let (mut targets, mut weights) = (Vec::new(), Vec::new());
    for &j in &slots {
        let (t, w) = event_target(video.events.get(j), video.frames(), width, j == m);
        targets.extend(t);
        weights.extend(w);
    }
    Ok(g.bce_with_logits(logits, &targets, &weights, denom))
}

pub fn finetune_ed(
    model: &mut Model,
    corpus: &[EncodedVideo],
    config: &TrainConfig,
    seed: u64,
    on_checkpoint: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    let eligible: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].mefm_allowed).collect();
    if eligible.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let step = |model: &Model, _: usize, rng: &mut ChaCha8Rng| -> Result<StepOutput> {
        let samples = (0..config.batch_size)
            .map(|_| {
                let v = eligible[rng.random_range(0..eligible.len())];
                Ok(EdSample { video: v, masked: mask_events(corpus[v].events.len(), config.mask_prob, rng)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let denom: usize = samples.iter().map(|s| s.masked.len() + 1).sum();
        let mut grads = Gradients::empty(model.params.len());
        let mut total = 0.0;
        for s in &samples {
            let mut g = Graph::new();
            let loss = ed_loss(model, &mut g, &corpus[s.video], s, denom as f64)?;
            total += g.value(loss).item();
            grads.accumulate(&g.param_grads(loss, &model.params)?);
        }
        Ok(StepOutput { grads, losses: alloc::vec![(Task::Ed, total)] })
    };
    train::run(model, config, seed, STAGE_ED, step, on_checkpoint)
}

/// Per-slot event-head logits for the given prefix followed by one `[MASK]`
/// slot; returns the logits of that last slot.
pub fn next_event_logits(model: &Model, features: &Tensor, prefix: &[EventVector]) -> Result<Vec<f64>> {
    let mut events: Vec<EventInput> = prefix.iter().cloned().map(EventInput::Vector).collect();
    events.push(EventInput::Masked);
    let input = ModelInput { video: features, events: &events, text: None };
    let layout = input.layout();
    let mut g = Graph::new();
    let h = model.forward(&mut g, &input, &build_causal_mask(&layout, Stream::Event), None)?;
    let row = g.slice_rows(h, layout.event_slot(prefix.len()), 1);
    let logits = model.event_logits(&mut g, row);
    Ok(g.value(logits).data().to_vec())
}

/// Generates events one at a time until the stop probability exceeds its
/// threshold, an all-zero vector comes out, or the limit is reached.
pub fn generate_events(model: &Model, features: &Tensor, decode: &DecodeConfig) -> Result<EventSequence> {
    decode.validate()?;
    let n = features.rows();
    if n > model.config.max_frames {
        return Err(Error::Overflow { what: "frame count", got: n, max: model.config.max_frames });
    }
    let limit = decode.max_events.min(model.config.max_events);
    let mut rng = ChaCha8Rng::seed_from_u64(decode.sample_seed);
    let mut events: Vec<EventVector> = Vec::new();
    while events.len() < limit {
        let logits = next_event_logits(model, features, &events)?;
        if sigmoid(logits[model.config.stop_index()]) > decode.stop_threshold {
            break;
        }
        let bits: Vec<bool> = logits[..n]
            .iter()
            .map(|&z| {
                let p = sigmoid(z);
                if decode.sample_bits {
                    rng.random_bool(p)
                } else {
                    p > decode.frame_threshold
                }
            })
            .collect();
        let v = EventVector::from_bits(bits);
        if !v.is_valid() {
            break;
        }
        events.push(v);
    }
    event_codec::sort_and_validate(events)
}

// ---- event captioning ----

#[derive(Debug, Clone, PartialEq)]
pub struct EcSample {
    pub video: usize,
    pub event: usize,
    /// `[SOS]`, caption with masked positions replaced by `[MASK]`, `[EOS]`.
    pub text: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

pub fn ec_sample<R: Rng>(corpus: &[EncodedVideo], video: usize, event: usize, prob: f64, rng: &mut R) -> Result<EcSample> {
    let caption = &corpus[video].captions[event];
    let mut full = Vec::with_capacity(caption.len() + 2);
    full.push(SOS);
    full.extend(caption);
    full.push(EOS);
    // positions 1..len, never the leading [SOS]
    let mut positions: Vec<usize> = (1..full.len()).filter(|_| rng.random_bool(prob)).collect();
    if positions.is_empty() {
        positions.push(rng.random_range(1..full.len()));
    }
    let targets = positions.iter().map(|&p| full[p]).collect();
    let mut text = full;
    for &p in &positions {
        text[p] = MASK;
    }
    Ok(EcSample { video, event, text, positions, targets })
}

pub fn ec_loss(model: &Model, g: &mut Graph, video: &EncodedVideo, s: &EcSample, denom: f64) -> Result<Var> {
    let events: Vec<EventInput> = video.events.iter().cloned().map(EventInput::Vector).collect();
    let input = ModelInput { video: &video.features, events: &events, text: Some(&s.text) };
    let layout = input.layout();
    let mask = build_caption_generation_mask(&layout, s.event)?;
    let h = model.forward(g, &input, &mask, None)?;
    let rows: Vec<usize> = s.positions.iter().map(|&p| layout.text_pos(p)).collect();
    let th = g.gather_rows(h, &rows);
    let logits = model.mlm_logits(g, th);
    let targets: Vec<usize> = s.targets.iter().map(|&t| t as usize).collect();
    Ok(g.cross_entropy(logits, &targets, denom))
}

pub fn finetune_ec(
    model: &mut Model,
    corpus: &[EncodedVideo],
    config: &TrainConfig,
    seed: u64,
    on_checkpoint: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let step = |model: &Model, _: usize, rng: &mut ChaCha8Rng| -> Result<StepOutput> {
        let samples = (0..config.batch_size)
            .map(|_| {
                let v = rng.random_range(0..corpus.len());
                let e = rng.random_range(0..corpus[v].events.len());
                ec_sample(corpus, v, e, config.mask_prob, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let denom: usize = samples.iter().map(|s| s.positions.len()).sum();
        let mut grads = Gradients::empty(model.params.len());
        let mut total = 0.0;
        for s in &samples {
            let mut g = Graph::new();
            let loss = ec_loss(model, &mut g, &corpus[s.video], s, denom as f64)?;
            total += g.value(loss).item();
            grads.accumulate(&g.param_grads(loss, &model.params)?);
        }
        Ok(StepOutput { grads, losses: alloc::vec![(Task::Ec, total)] })
    };
    train::run(model, config, seed, STAGE_EC, step, on_checkpoint)
}

/// Vocabulary logits for the slot after `prefix` (which starts with `[SOS]`).
pub fn next_token_logits(
    model: &Model,
    features: &Tensor,
    events: &[EventVector],
    current: usize,
    prefix: &[u32],
) -> Result<Vec<f64>> {
    let ev: Vec<EventInput> = events.iter().cloned().map(EventInput::Vector).collect();
    let mut text = prefix.to_vec();
    text.push(MASK);
    let input = ModelInput { video: features, events: &ev, text: Some(&text) };
    let layout = input.layout();
    let mask = build_caption_generation_mask(&layout, current)?;
    let mut g = Graph::new();
    let h = model.forward(&mut g, &input, &mask, None)?;
    let row = g.slice_rows(h, layout.text_pos(prefix.len()), 1);
    let logits = model.mlm_logits(&mut g, row);
    Ok(g.value(logits).data().to_vec())
}

/// Greedy caption for `events[current]`; never emits special tokens and
/// stops at `[EOS]` or the length limit.
pub fn generate_caption(
    model: &Model,
    features: &Tensor,
    events: &[EventVector],
    current: usize,
    decode: &DecodeConfig,
) -> Result<Vec<u32>> {
    if current >= events.len() {
        return Err(Error::IndexOutOfRange { index: current, len: events.len() });
    }
    if !events[current].is_valid() {
        return Err(Error::NoEvent);
    }
    let limit = decode.max_caption_len.min(model.config.max_text_len.saturating_sub(2)).max(1);
    let mut prefix = alloc::vec![SOS];
    let mut out = Vec::new();
    while out.len() < limit {
        let logits = next_token_logits(model, features, events, current, &prefix)?;
        let best = logits
            .iter()
            .enumerate()
            .filter(|&(id, _)| ![PAD, SOS, MASK, UNK].contains(&(id as u32)))
            .fold((EOS as usize, f64::NEG_INFINITY), |acc, (id, &z)| if z > acc.1 { (id, z) } else { acc })
            .0 as u32;
        if best == EOS {
            break;
        }
        out.push(best);
        prefix.push(best);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedEvent {
    pub interval: TimeInterval,
    pub vector: EventVector,
    pub sentence: String,
}

/// Events from the detector, then one caption per event from the captioner.
pub fn detect_then_describe(
    detector: &Model,
    captioner: &Model,
    vocab: &Vocabulary,
    features: &Tensor,
    duration: f64,
    decode: &DecodeConfig,
) -> Result<Vec<DetectedEvent>> {
    let events = generate_events(detector, features, decode)?.into_events();
    let mut out = Vec::with_capacity(events.len());
    for i in 0..events.len() {
        let tokens = generate_caption(captioner, features, &events, i, decode)?;
        out.push(DetectedEvent {
            interval: event_codec::decode(&events[i], duration)?,
            vector: events[i].clone(),
            sentence: vocab.decode(&tokens),
        });
    }
    Ok(out)
}
