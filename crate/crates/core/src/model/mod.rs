//! Multi-stream transformer over video frames, event vectors and caption tokens.
//!
//! Each modality is embedded to the hidden size, tagged with a learned
//! modality embedding and positional embeddings, and passed through its own
//! encoder. A cross encoder then runs joint self-attention over the
//! concatenated `[video | events | text]` sequence. Every task-specific
//! restriction (other-event blocking, left-to-right generation) is expressed
//! as one joint [`AttentionMask`]; single-modal encoders use its diagonal
//! blocks.

mod config;
mod layers;
pub mod masks;

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::ModelConfig;
pub use layers::{Block, LayerNorm, Linear, SelfAttention};
pub use masks::{
    build_base_mask, build_caption_generation_mask, build_caption_mask, build_causal_mask, Layout, Stream,
};

use crate::event_codec::EventVector;
use crate::numerics::{AttentionMask, Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

const EMBED_INIT: f64 = 0.1;

/// One slot of the event stream after the start sentinel.
#[derive(Debug, Clone, PartialEq)]
pub enum EventInput {
    Vector(EventVector),
    /// The all-zeros `[MASK]` event.
    Masked,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    /// N × D frame features; masked frames are already zeroed by the caller.
    pub video: &'a Tensor,
    pub events: &'a [EventInput],
    /// Token ids including `[SOS]`; absent for video+event batches.
    pub text: Option<&'a [u32]>,
}

impl ModelInput<'_> {
    pub fn layout(&self) -> Layout {
        Layout::new(self.video.rows(), self.events.len(), self.text.map_or(0, <[u32]>::len))
    }
}

/// Embedded (pre-encoder) rows per modality.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    pub video: Var,
    pub events: Var,
    pub text: Option<Var>,
    pub layout: Layout,
}

#[derive(Debug, Clone)]
struct Params {
    video_proj: Linear,
    video_mode: ParamId,
    video_pos: ParamId,
    event_proj: Linear,
    event_mode: ParamId,
    event_pos: ParamId,
    event_start: ParamId,
    word: ParamId,
    text_mode: ParamId,
    text_pos: ParamId,
    video_encoder: Vec<Block>,
    event_encoder: Vec<Block>,
    text_encoder: Vec<Block>,
    cross_encoder: Vec<Block>,
    mlm_weight: Option<ParamId>,
    mlm_bias: ParamId,
    mvfr_bias: ParamId,
    event_head: Linear,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    p: Params,
}

impl Model {
    /// Freshly initialised model; parameter registration order is fixed, so
    /// equal configs and seeds give identical stores.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let h = config.hidden;
        let ffn = h * config.ffn_mult;
        let r = &mut rng;
        let video_proj = Linear::new(&mut s, "embed.video.proj", config.feature_dim, h, r);
        let video_mode = s.add_uniform("embed.video.mode", 1, h, EMBED_INIT, r);
        let video_pos = s.add_uniform("embed.video.pos", config.max_frames, h, EMBED_INIT, r);
        let event_proj = Linear::new(&mut s, "embed.event.proj", config.max_frames, h, r);
        let event_mode = s.add_uniform("embed.event.mode", 1, h, EMBED_INIT, r);
        let event_pos = s.add_uniform("embed.event.pos", config.event_positions(), h, EMBED_INIT, r);
        let event_start = s.add_uniform("embed.event.start", 1, h, EMBED_INIT, r);
        let word = s.add_uniform("embed.text.word", config.vocab_size, h, EMBED_INIT, r);
        let text_mode = s.add_uniform("embed.text.mode", 1, h, EMBED_INIT, r);
        let text_pos = s.add_uniform("embed.text.pos", config.max_text_len, h, EMBED_INIT, r);
        let video_encoder = layers::stack(&mut s, "encoder.video", config.video_layers, h, config.heads, ffn, r);
        let event_encoder = layers::stack(&mut s, "encoder.event", config.event_layers, h, config.heads, ffn, r);
        let text_encoder = layers::stack(&mut s, "encoder.text", config.text_layers, h, config.heads, ffn, r);
        let cross_encoder = layers::stack(&mut s, "encoder.cross", config.cross_layers, h, config.heads, ffn, r);
        let mlm_weight =
            (!config.tie_mlm).then(|| s.add_uniform("head.mlm.weight", config.vocab_size, h, EMBED_INIT, r));
        let mlm_bias = s.add_zeros("head.mlm.bias", 1, config.vocab_size);
        let mvfr_bias = s.add_zeros("head.mvfr.bias", 1, config.feature_dim);
        let event_head = Linear::new(&mut s, "head.event", h, config.event_outputs(), r);
        let p = Params {
            video_proj,
            video_mode,
            video_pos,
            event_proj,
            event_mode,
            event_pos,
            event_start,
            word,
            text_mode,
            text_pos,
            video_encoder,
            event_encoder,
            text_encoder,
            cross_encoder,
            mlm_weight,
            mlm_bias,
            mvfr_bias,
            event_head,
        };
        Ok(Self { config, params: s, p })
    }

    /// Rebuilds a model from a config and a parameter store loaded elsewhere.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    pub fn video_projection_weight(&self) -> ParamId {
        self.p.video_proj.weight
    }

    pub fn word_embeddings(&self) -> ParamId {
        self.p.word
    }

    pub fn event_head(&self) -> Linear {
        self.p.event_head
    }

    /// Parameters used only by the text stream and the word head.
    pub fn text_only_params(&self) -> Vec<ParamId> {
        let prefixes = ["embed.text.", "encoder.text.", "head.mlm."];
        self.params
            .ids()
            .filter(|&id| prefixes.iter().any(|p| self.params.name(id).starts_with(p)))
            .collect()
    }

    pub fn embed_streams(&self, g: &mut Graph, input: &ModelInput<'_>) -> Result<Streams> {
        let c = &self.config;
        let s = &self.params;
        let layout = input.layout();
        let n = layout.frames;
        if input.video.cols() != c.feature_dim {
            return Err(Error::ShapeMismatch(alloc::format!(
                "video features have {} dims, model expects {}",
                input.video.cols(),
                c.feature_dim
            )));
        }
        if n == 0 {
            return Err(Error::NoFrames);
        }
        if n > c.max_frames {
            return Err(Error::Overflow { what: "frame count", got: n, max: c.max_frames });
        }
        if layout.event_slots + 1 > c.event_positions() {
            return Err(Error::Overflow { what: "event slots", got: layout.event_slots, max: c.event_positions() - 1 });
        }
        if layout.text > c.max_text_len {
            return Err(Error::Overflow { what: "text length", got: layout.text, max: c.max_text_len });
        }

        let x = g.constant(input.video.clone());
        let mut video = self.p.video_proj.forward(g, s, x);
        let mode = g.param(s, self.p.video_mode);
        video = g.add_row(video, mode);
        if c.video_positions {
            let table = g.param(s, self.p.video_pos);
            let pos = g.gather_rows(table, &(0..n).collect::<Vec<_>>());
            video = g.add(video, pos);
        }

        let start = g.param(s, self.p.event_start);
        let mut ev = if input.events.is_empty() {
            start
        } else {
            let mut rows = Vec::with_capacity(input.events.len() * c.max_frames);
            for e in input.events {
                match e {
                    EventInput::Vector(v) => {
                        if v.frame_count() > c.max_frames {
                            return Err(Error::Overflow { what: "event width", got: v.frame_count(), max: c.max_frames });
                        }
                        rows.extend(v.to_row(c.max_frames));
                    }
                    EventInput::Masked => rows.extend(core::iter::repeat_n(0.0, c.max_frames)),
                }
            }
            let e = g.constant(Tensor::matrix(input.events.len(), c.max_frames, rows)?);
            let proj = self.p.event_proj.forward(g, s, e);
            g.concat_rows(&[start, proj])
        };
        let mode = g.param(s, self.p.event_mode);
        ev = g.add_row(ev, mode);
        let table = g.param(s, self.p.event_pos);
        let pos = g.gather_rows(table, &(0..layout.event_slots + 1).collect::<Vec<_>>());
        ev = g.add(ev, pos);

        let text = match input.text {
            Some(ids) if !ids.is_empty() => {
                if let Some(&bad) = ids.iter().find(|&&t| t as usize >= c.vocab_size) {
                    return Err(Error::IndexOutOfRange { index: bad as usize, len: c.vocab_size });
                }
                let table = g.param(s, self.p.word);
                let idx: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
                let mut t = g.gather_rows(table, &idx);
                let mode = g.param(s, self.p.text_mode);
                t = g.add_row(t, mode);
                let table = g.param(s, self.p.text_pos);
                let pos = g.gather_rows(table, &(0..ids.len()).collect::<Vec<_>>());
                Some(g.add(t, pos))
            }
            _ => None,
        };
        Ok(Streams { video, events: ev, text, layout })
    }

    fn run_stack(
        &self,
        g: &mut Graph,
        blocks: &[Block],
        mut x: Var,
        mask: &AttentionMask,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        for b in blocks {
            x = b.forward(g, &self.params, x, mask, self.config.dropout, rng.as_deref_mut())?;
        }
        Ok(x)
    }

    /// Single-modal encoders under the diagonal blocks of `mask`, then the
    /// cross encoder over the joint sequence. Returns joint hidden states.
    pub fn encode(
        &self,
        g: &mut Graph,
        streams: &Streams,
        mask: &AttentionMask,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let layout = streams.layout;
        if mask.len() != layout.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "mask of length {} for joint length {}",
                mask.len(),
                layout.len()
            )));
        }
        let video =
            self.run_stack(g, &self.p.video_encoder, streams.video, &mask.sub_mask(layout.video()), rng.as_deref_mut())?;
        let events =
            self.run_stack(g, &self.p.event_encoder, streams.events, &mask.sub_mask(layout.events()), rng.as_deref_mut())?;
        let mut parts = alloc::vec![video, events];
        if let Some(t) = streams.text {
            parts.push(self.run_stack(g, &self.p.text_encoder, t, &mask.sub_mask(layout.text()), rng.as_deref_mut())?);
        }
        let joint = g.concat_rows(&parts);
        self.run_stack(g, &self.p.cross_encoder, joint, mask, rng)
    }

    /// Embeds and encodes; returns joint hidden states (L × H).
    pub fn forward(
        &self,
        g: &mut Graph,
        input: &ModelInput<'_>,
        mask: &AttentionMask,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let streams = self.embed_streams(g, input)?;
        self.encode(g, &streams, mask, rng)
    }

    /// Vocabulary logits for hidden rows.
    pub fn mlm_logits(&self, g: &mut Graph, rows: Var) -> Var {
        let w = g.param(&self.params, self.p.mlm_weight.unwrap_or(self.p.word));
        let b = g.param(&self.params, self.p.mlm_bias);
        let y = g.matmul_t(rows, w);
        g.add_row(y, b)
    }

    /// Reconstructed raw features through the transposed video embedding.
    pub fn mvfr_predict(&self, g: &mut Graph, rows: Var) -> Var {
        let w = g.param(&self.params, self.p.video_proj.weight);
        let b = g.param(&self.params, self.p.mvfr_bias);
        let y = g.matmul_t(rows, w);
        g.add_row(y, b)
    }

    /// Per-frame logits followed by the stop logit (`max_frames + 1` columns).
    pub fn event_logits(&self, g: &mut Graph, rows: Var) -> Var {
        self.p.event_head.forward(g, &self.params, rows)
    }
}

#[cfg(test)]
mod tests;
