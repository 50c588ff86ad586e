//! Attention masks over the joint `[video | events | text]` sequence.

use core::ops::Range;

use crate::numerics::AttentionMask;
use crate::{Error, Result};

/// Segment lengths of the joint sequence. The event segment starts with the
/// start sentinel, so it has one more row than there are event slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub frames: usize,
    pub event_slots: usize,
    pub text: usize,
}

impl Layout {
    pub fn new(frames: usize, event_slots: usize, text: usize) -> Self {
        Self { frames, event_slots, text }
    }

    pub fn len(&self) -> usize {
        self.frames + 1 + self.event_slots + self.text
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn video(&self) -> Range<usize> {
        0..self.frames
    }

    /// Start sentinel plus event slots.
    pub fn events(&self) -> Range<usize> {
        self.frames..self.frames + 1 + self.event_slots
    }

    pub fn text(&self) -> Range<usize> {
        let s = self.frames + 1 + self.event_slots;
        s..s + self.text
    }

    /// Joint position of event slot `i` (0-based, after the sentinel).
    pub fn event_slot(&self, i: usize) -> usize {
        self.frames + 1 + i
    }

    pub fn text_pos(&self, i: usize) -> usize {
        self.frames + 1 + self.event_slots + i
    }
}

/// Which stream is generated left-to-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Event,
    Text,
}

/// Unrestricted bidirectional attention.
pub fn build_base_mask(layout: &Layout) -> AttentionMask {
    AttentionMask::full(layout.len())
}

/// Blocks the keys of every event slot other than `current` for all queries.
pub fn restrict_to_event(mask: &mut AttentionMask, layout: &Layout, current: usize) -> Result<()> {
    if current >= layout.event_slots {
        return Err(Error::IndexOutOfRange { index: current, len: layout.event_slots });
    }
    for j in (0..layout.event_slots).filter(|&j| j != current) {
        mask.block_key(layout.event_slot(j));
    }
    Ok(())
}

/// Bidirectional mask in which only event `current` is visible.
pub fn build_caption_mask(layout: &Layout, current: usize) -> Result<AttentionMask> {
    let mut mask = build_base_mask(layout);
    restrict_to_event(&mut mask, layout, current)?;
    Ok(mask)
}

/// Left-to-right mask over one stream. Inside the stream a query sees keys at
/// or before itself; stream queries see every other position; queries outside
/// the stream never see it, so nothing flows back from later items.
pub fn build_causal_mask(layout: &Layout, stream: Stream) -> AttentionMask {
    let mut mask = build_base_mask(layout);
    let range = match stream {
        Stream::Event => layout.events(),
        Stream::Text => layout.text(),
    };
    for q in 0..layout.len() {
        for k in range.clone() {
            let allowed = range.contains(&q) && k <= q;
            mask.set(q, k, allowed);
        }
    }
    mask
}

/// Causal text generation conditioned on one event.
pub fn build_caption_generation_mask(layout: &Layout, current: usize) -> Result<AttentionMask> {
    let mut mask = build_causal_mask(layout, Stream::Text);
    restrict_to_event(&mut mask, layout, current)?;
    Ok(mask)
}
