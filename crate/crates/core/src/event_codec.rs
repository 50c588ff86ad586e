//! Conversion between event timestamps and per-frame binary event vectors.
//!
//! Frame `t` of an `N`-frame video of duration `d` spans `[t·d/N, (t+1)·d/N)`.
//! An interval sets the bit of every frame it overlaps with positive length;
//! a zero-length interval sets the bit of the single frame containing it.
//! Decoding reads the first and last set bits, so holes inside a predicted
//! vector are ignored.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Snap tolerance for frame-aligned boundaries, in frame units.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    /// Validated interval with `0 ≤ start ≤ end ≤ duration`.
    pub fn new(start: f64, end: f64, duration: f64) -> Result<Self> {
        let iv = Self { start, end };
        iv.validate(duration)?;
        Ok(iv)
    }

    pub fn validate(&self, duration: f64) -> Result<()> {
        let ok = self.start.is_finite()
            && self.end.is_finite()
            && duration.is_finite()
            && 0.0 <= self.start
            && self.start <= self.end
            && self.end <= duration;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInterval { start: self.start, end: self.end, duration })
        }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventVector {
    bits: Vec<bool>,
}

impl EventVector {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self::from_bits)
    }

    pub fn zeros(frames: usize) -> Self {
        Self { bits: vec![false; frames] }
    }

    /// Contiguous run of ones over `first..=last`.
    pub fn run(frames: usize, first: usize, last: usize) -> Self {
        let mut bits = vec![false; frames];
        bits[first..=last].iter_mut().for_each(|b| *b = true);
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn frame_count(&self) -> usize {
        self.bits.len()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_valid(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn first_one(&self) -> Option<usize> {
        self.bits.iter().position(|&b| b)
    }

    pub fn last_one(&self) -> Option<usize> {
        self.bits.iter().rposition(|&b| b)
    }

    pub fn is_contiguous(&self) -> bool {
        match (self.first_one(), self.last_one()) {
            (Some(f), Some(l)) => self.bits[f..=l].iter().all(|&b| b),
            _ => false,
        }
    }

    /// Bits as a 0/1 row, zero-padded to `width`.
    pub fn to_row(&self, width: usize) -> Vec<f64> {
        let mut row = vec![0.0; width];
        for (r, &b) in row.iter_mut().zip(&self.bits) {
            *r = if b { 1.0 } else { 0.0 };
        }
        row
    }

    fn sort_key(&self) -> (usize, usize) {
        (self.first_one().unwrap_or(usize::MAX), self.last_one().unwrap_or(usize::MAX))
    }
}

impl core::fmt::Display for EventVector {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Events of one video ordered by start frame, then end frame.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSequence {
    events: Vec<EventVector>,
}

impl EventSequence {
    pub fn events(&self) -> &[EventVector] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<EventVector> {
        self.events
    }
}

fn to_frames(t: f64, frames: usize, duration: f64) -> f64 {
    let x = t * frames as f64 / duration;
    let r = libm::round(x);
    if (x - r).abs() < SNAP {
        r
    } else {
        x
    }
}

/// Encodes a time interval as an `frames`-bit event vector.
pub fn encode(interval: TimeInterval, duration: f64, frames: usize) -> Result<EventVector> {
    if frames == 0 {
        return Err(Error::NoFrames);
    }
    interval.validate(duration)?;
    if duration <= 0.0 {
        return Err(Error::InvalidInterval { start: interval.start, end: interval.end, duration });
    }
    let s = to_frames(interval.start, frames, duration);
    let e = to_frames(interval.end, frames, duration);
    let clamp = |x: f64| (x.max(0.0) as usize).min(frames - 1);
    let (first, last) = if e > s {
        let first = clamp(libm::floor(s));
        let last = clamp(libm::ceil(e) - 1.0).max(first);
        (first, last)
    } else {
        let t = clamp(libm::floor(s));
        (t, t)
    };
    Ok(EventVector::run(frames, first, last))
}

/// Decodes an event vector: start at the first set bit, end after the last.
pub fn decode(vector: &EventVector, duration: f64) -> Result<TimeInterval> {
    let (first, last) = match (vector.first_one(), vector.last_one()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::NoEvent),
    };
    let span = duration / vector.frame_count() as f64;
    Ok(TimeInterval { start: first as f64 * span, end: ((last + 1) as f64 * span).min(duration) })
}

/// Sorts events by start frame, then end frame. Duplicates are kept.
pub fn sort_and_validate(events: Vec<EventVector>) -> Result<EventSequence> {
    if events.iter().any(|e| !e.is_valid()) {
        return Err(Error::NoEvent);
    }
    let mut events = events;
    events.sort_by_key(EventVector::sort_key);
    Ok(EventSequence { events })
}
