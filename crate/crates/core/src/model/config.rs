use alloc::format;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Transformer dimensions. Defaults are desk-scale; the reference
/// architecture uses hidden 512, 8 heads, one layer per single-modal
/// encoder, 4 cross layers and up to 100 frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub video_layers: usize,
    pub event_layers: usize,
    pub text_layers: usize,
    /// May be zero, in which case the cross encoder is the identity.
    pub cross_layers: usize,
    pub max_frames: usize,
    pub feature_dim: usize,
    pub vocab_size: usize,
    /// Text positions, including `[SOS]`, `[EOS]` and a generation slot.
    pub max_text_len: usize,
    pub max_events: usize,
    pub ffn_mult: usize,
    pub tie_mlm: bool,
    pub video_positions: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            heads: 4,
            video_layers: 1,
            event_layers: 1,
            text_layers: 1,
            cross_layers: 2,
            max_frames: 32,
            feature_dim: 16,
            vocab_size: 64,
            max_text_len: 16,
            max_events: 8,
            ffn_mult: 4,
            tie_mlm: true,
            video_positions: true,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::HeadsNotDivisible { hidden: self.hidden, heads: self.heads });
        }
        let counts = [
            ("hidden", self.hidden),
            ("video_layers", self.video_layers),
            ("event_layers", self.event_layers),
            ("text_layers", self.text_layers),
            ("max_frames", self.max_frames),
            ("feature_dim", self.feature_dim),
            ("vocab_size", self.vocab_size),
            ("max_text_len", self.max_text_len),
            ("max_events", self.max_events),
            ("ffn_mult", self.ffn_mult),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        if self.vocab_size <= crate::text::NUM_SPECIAL as usize {
            return Err(Error::Config(format!("model.vocab_size {} leaves no room for words", self.vocab_size)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Event-stream positions: start sentinel, events, and one generation slot.
    pub fn event_positions(&self) -> usize {
        self.max_events + 2
    }

    /// Outputs of the event head: one logit per frame plus the stop logit.
    pub fn event_outputs(&self) -> usize {
        self.max_frames + 1
    }

    pub fn stop_index(&self) -> usize {
        self.max_frames
    }
}
