//! Masked pre-training: word, frame-feature and event-vector masking, their
//! losses, and the step scheduler that alternates between video+event+text
//! batches and video+event batches.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedVideo;
use crate::event_codec::EventVector;
use crate::model::{build_base_mask, build_caption_mask, EventInput, Model, ModelInput};
use crate::numerics::{Graph, Tensor, Var};
use crate::text::{EOS, MASK, NUM_SPECIAL, SOS};
use crate::train::{self, LossRecord, StepOutput, Task, TrainConfig};
use crate::{Error, Result};

pub const STAGE_PRETRAIN: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchKind {
    /// Video, one event, and its caption: word and frame-feature masking.
    Three,
    /// Video and the event sequence: event masking.
    Two,
}

/// Picks a video+event+text batch with probability `lambda`.
pub fn sample_batch_kind<R: Rng>(lambda: f64, rng: &mut R) -> BatchKind {
    if rng.random_bool(lambda.clamp(0.0, 1.0)) {
        BatchKind::Three
    } else {
        BatchKind::Two
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskBranch {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextMasking {
    pub input: Vec<u32>,
    /// Selected positions, ascending.
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
    pub branches: Vec<MaskBranch>,
}

fn select<R: Rng>(len: usize, prob: f64, rng: &mut R) -> Vec<usize> {
    let mut picked: Vec<usize> = (0..len).filter(|_| rng.random_bool(prob)).collect();
    if picked.is_empty() && len > 0 {
        picked.push(rng.random_range(0..len));
    }
    picked
}

/// Selects each token with probability `prob` (at least one). A selected
/// token becomes `[MASK]` 80% of the time, a random word 10%, and stays
/// unchanged otherwise.
pub fn mask_text<R: Rng>(tokens: &[u32], vocab_size: usize, prob: f64, rng: &mut R) -> Result<TextMasking> {
    if tokens.is_empty() {
        return Err(Error::EmptyCaption);
    }
    let positions = select(tokens.len(), prob, rng);
    let mut input = tokens.to_vec();
    let mut branches = Vec::with_capacity(positions.len());
    for &p in &positions {
        let u: f64 = rng.random();
        let b = if u < 0.8 {
            input[p] = MASK;
            MaskBranch::Mask
        } else if u < 0.9 {
            input[p] = rng.random_range(NUM_SPECIAL..vocab_size as u32);
            MaskBranch::Random
        } else {
            MaskBranch::Keep
        };
        branches.push(b);
    }
    let targets = positions.iter().map(|&p| tokens[p]).collect();
    Ok(TextMasking { input, positions, targets, branches })
}

/// Frames of `event` chosen for feature masking (at least one).
pub fn mask_video_frames<R: Rng>(frames: usize, event: &EventVector, prob: f64, rng: &mut R) -> Result<Vec<usize>> {
    if event.frame_count() != frames {
        return Err(Error::ShapeMismatch(alloc::format!(
            "event spans {} frames, video has {frames}",
            event.frame_count()
        )));
    }
    let inside: Vec<usize> = (0..frames).filter(|&t| event.bits()[t]).collect();
    if inside.is_empty() {
        return Err(Error::NoEvent);
    }
    Ok(select(inside.len(), prob, rng).into_iter().map(|i| inside[i]).collect())
}

/// Event indices chosen for masking (at least one).
pub fn mask_events<R: Rng>(count: usize, prob: f64, rng: &mut R) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(select(count, prob, rng))
}

/// Replaces the given rows with zeros.
pub fn zero_rows(features: &Tensor, rows: &[usize]) -> Tensor {
    let mut out = features.clone();
    for &r in rows {
        out.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
    }
    out
}

/// Event-head targets and weights: frame bits padded to the model width,
/// then the stop bit. Padding columns get zero weight.
pub fn event_target(event: Option<&EventVector>, frames: usize, width: usize, stop: bool) -> (Vec<f64>, Vec<f64>) {
    let mut target = alloc::vec![0.0; width + 1];
    let mut weight = alloc::vec![0.0; width + 1];
    for t in 0..frames {
        weight[t] = 1.0;
        if let Some(e) = event {
            target[t] = if e.bits()[t] { 1.0 } else { 0.0 };
        }
    }
    target[width] = if stop { 1.0 } else { 0.0 };
    weight[width] = 1.0;
    (target, weight)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreeSample {
    pub video: usize,
    pub event: usize,
    /// `[SOS]`, masked caption, `[EOS]`.
    pub text: Vec<u32>,
    /// Masked positions within `text`.
    pub text_positions: Vec<usize>,
    pub text_targets: Vec<u32>,
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSample {
    pub video: usize,
    pub masked: Vec<usize>,
}

pub fn three_sample<R: Rng>(
    corpus: &[EncodedVideo],
    video: usize,
    event: usize,
    vocab_size: usize,
    prob: f64,
    rng: &mut R,
) -> Result<ThreeSample> {
    let v = corpus.get(video).ok_or(Error::IndexOutOfRange { index: video, len: corpus.len() })?;
    let caption = v.captions.get(event).ok_or(Error::IndexOutOfRange { index: event, len: v.captions.len() })?;
    let tm = mask_text(caption, vocab_size, prob, rng)?;
    let mut text = Vec::with_capacity(caption.len() + 2);
    text.push(SOS);
    text.extend(&tm.input);
    text.push(EOS);
    let frames = mask_video_frames(v.frames(), &v.events[event], prob, rng)?;
    Ok(ThreeSample {
        video,
        event,
        text,
        text_positions: tm.positions.iter().map(|p| p + 1).collect(),
        text_targets: tm.targets,
        frames,
    })
}

pub fn two_sample<R: Rng>(corpus: &[EncodedVideo], video: usize, prob: f64, rng: &mut R) -> Result<TwoSample> {
    let v = corpus.get(video).ok_or(Error::IndexOutOfRange { index: video, len: corpus.len() })?;
    Ok(TwoSample { video, masked: mask_events(v.events.len(), prob, rng)? })
}

fn dropout_rng(model: &Model, rng: &mut ChaCha8Rng) -> Option<ChaCha8Rng> {
    (model.config.dropout > 0.0).then(|| {
        use rand::SeedableRng;
        ChaCha8Rng::seed_from_u64(rng.random())
    })
}

/// Word and frame-feature losses of one sample, each divided by the batch
/// totals of masked words and masked frames.
pub fn three_losses(
    model: &Model,
    g: &mut Graph,
    video: &EncodedVideo,
    s: &ThreeSample,
    text_denom: f64,
    frame_denom: f64,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Var)> {
    let features = zero_rows(&video.features, &s.frames);
    let events: Vec<EventInput> = video.events.iter().cloned().map(EventInput::Vector).collect();
    let input = ModelInput { video: &features, events: &events, text: Some(&s.text) };
    let layout = input.layout();
    let mask = build_caption_mask(&layout, s.event)?;
    let h = model.forward(g, &input, &mask, dropout)?;

    let rows: Vec<usize> = s.text_positions.iter().map(|&p| layout.text_pos(p)).collect();
    let th = g.gather_rows(h, &rows);
    let logits = model.mlm_logits(g, th);
    let targets: Vec<usize> = s.text_targets.iter().map(|&t| t as usize).collect();
    let mlm = g.cross_entropy(logits, &targets, text_denom);

    let vh = g.gather_rows(h, &s.frames);
    let pred = model.mvfr_predict(g, vh);
    let target: Vec<f64> = s.frames.iter().flat_map(|&f| video.features.row(f).iter().copied()).collect();
    let mvfr = g.squared_error(pred, &target, frame_denom);
    Ok((mlm, mvfr))
}

/// Event-vector loss of one sample, divided by the batch total of masked events.
pub fn two_loss(
    model: &Model,
    g: &mut Graph,
    video: &EncodedVideo,
    s: &TwoSample,
    denom: f64,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let events: Vec<EventInput> = video
        .events
        .iter()
        .enumerate()
        .map(|(j, e)| if s.masked.contains(&j) { EventInput::Masked } else { EventInput::Vector(e.clone()) })
        .collect();
    let input = ModelInput { video: &video.features, events: &events, text: None };
    let layout = input.layout();
    let h = model.forward(g, &input, &build_base_mask(&layout), dropout)?;
    let rows: Vec<usize> = s.masked.iter().map(|&j| layout.event_slot(j)).collect();
    let eh = g.gather_rows(h, &rows);
    let logits = model.event_logits(g, eh);
    let width = model.config.max_frames;
    let (mut targets, mut weights) = (Vec::new(), Vec::new());
    for &j in &s.masked {
        let (t, w) = event_target(Some(&video.events[j]), video.frames(), width, false);
        targets.extend(t);
        weights.extend(w);
    }
    Ok(g.bce_with_logits(logits, &targets, &weights, denom))
}

/// One pre-training batch. Returns summed gradients and the batch losses.
pub fn pretrain_step(
    model: &Model,
    corpus: &[EncodedVideo],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutput> {
    let eligible: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].mefm_allowed).collect();
    let mut kind = sample_batch_kind(config.lambda, rng);
    if kind == BatchKind::Two && eligible.is_empty() {
        kind = BatchKind::Three;
    }
    let vocab = model.config.vocab_size;
    let mut grads = crate::numerics::Gradients::empty(model.params.len());
    match kind {
        BatchKind::Three => {
            let samples = (0..config.batch_size)
                .map(|_| {
                    let v = rng.random_range(0..corpus.len());
                    let e = rng.random_range(0..corpus[v].events.len());
                    three_sample(corpus, v, e, vocab, config.mask_prob, rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let words: usize = samples.iter().map(|s| s.text_positions.len()).sum();
            let frames: usize = samples.iter().map(|s| s.frames.len()).sum();
            let (mut mlm_total, mut mvfr_total) = (0.0, 0.0);
            for s in &samples {
                let mut g = Graph::new();
                let mut drop = dropout_rng(model, rng);
                let (mlm, mvfr) =
                    three_losses(model, &mut g, &corpus[s.video], s, words as f64, frames as f64, drop.as_mut())?;
                mlm_total += g.value(mlm).item();
                mvfr_total += g.value(mvfr).item();
                let total = g.add(mlm, mvfr);
                grads.accumulate(&g.param_grads(total, &model.params)?);
            }
            Ok(StepOutput { grads, losses: alloc::vec![(Task::Mlm, mlm_total), (Task::Mvfr, mvfr_total)] })
        }
        BatchKind::Two => {
            let samples = (0..config.batch_size)
                .map(|_| {
                    let v = eligible[rng.random_range(0..eligible.len())];
                    two_sample(corpus, v, config.mask_prob, rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let events: usize = samples.iter().map(|s| s.masked.len()).sum();
            let mut total = 0.0;
            for s in &samples {
                let mut g = Graph::new();
                let mut drop = dropout_rng(model, rng);
                let loss = two_loss(model, &mut g, &corpus[s.video], s, events as f64, drop.as_mut())?;
                total += g.value(loss).item();
                grads.accumulate(&g.param_grads(loss, &model.params)?);
            }
            Ok(StepOutput { grads, losses: alloc::vec![(Task::Mefm, total)] })
        }
    }
}

/// Pre-trains `model` in place; deterministic for a given seed.
pub fn pretrain(
    model: &mut Model,
    corpus: &[EncodedVideo],
    config: &TrainConfig,
    seed: u64,
    on_checkpoint: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(v) = corpus.iter().find(|v| v.events.is_empty()) {
        return Err(Error::Config(alloc::format!("video {} has no events", v.video_id)));
    }
    train::run(
        model,
        config,
        seed,
        STAGE_PRETRAIN,
        |m, _, rng| pretrain_step(m, corpus, config, rng),
        on_checkpoint,
    )
}

#[cfg(test)]
mod tests;
