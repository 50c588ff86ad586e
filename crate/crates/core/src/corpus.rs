//! In-memory dense-captioning records and their token-encoded form.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::event_codec::{self, EventVector, TimeInterval};
use crate::numerics::Tensor;
use crate::text::Vocabulary;
use crate::{Error, Result};

/// One untrimmed video with its annotated events and per-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration: f64,
    pub events: Vec<TimeInterval>,
    pub sentences: Vec<String>,
    /// N × D frame features.
    pub features: Tensor,
    /// False for clip-caption records whose single event is synthetic; the
    /// pre-training scheduler keeps them out of event-modeling batches.
    pub mefm_allowed: bool,
}

impl VideoRecord {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.len() != self.sentences.len() || self.events.is_empty() {
            return Err(Error::Config(format!(
                "video {}: {} events vs {} sentences",
                self.video_id,
                self.events.len(),
                self.sentences.len()
            )));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Config(format!("video {}: duration must be positive", self.video_id)));
        }
        for e in &self.events {
            e.validate(self.duration)?;
        }
        if self.frames() == 0 {
            return Err(Error::NoFrames);
        }
        if !self.features.is_finite() {
            return Err(Error::Config(format!("video {}: non-finite features", self.video_id)));
        }
        Ok(())
    }
}

/// Training view of a record: event bit-vectors and token ids, sorted by the
/// event ordering key with captions kept aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVideo {
    pub video_id: String,
    pub duration: f64,
    pub features: Tensor,
    pub events: Vec<EventVector>,
    pub captions: Vec<Vec<u32>>,
    pub mefm_allowed: bool,
}

impl EncodedVideo {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn from_record(record: &VideoRecord, vocab: &Vocabulary) -> Result<Self> {
        record.validate()?;
        let n = record.frames();
        let mut pairs: Vec<(EventVector, Vec<u32>)> = record
            .events
            .iter()
            .zip(&record.sentences)
            .map(|(iv, s)| Ok((event_codec::encode(*iv, record.duration, n)?, vocab.encode(s))))
            .collect::<Result<_>>()?;
        pairs.sort_by_key(|(e, _)| (e.first_one(), e.last_one()));
        let (events, captions) = pairs.into_iter().unzip();
        Ok(Self {
            video_id: record.video_id.clone(),
            duration: record.duration,
            features: record.features.clone(),
            events,
            captions,
            mefm_allowed: record.mefm_allowed,
        })
    }
}

pub fn encode_corpus(records: &[VideoRecord], vocab: &Vocabulary) -> Result<Vec<EncodedVideo>> {
    records.iter().map(|r| EncodedVideo::from_record(r, vocab)).collect()
}

/// Copies `records` with features replaced by `features[i]` (same order).
pub fn with_features(records: &[VideoRecord], features: Vec<Tensor>) -> Vec<VideoRecord> {
    records
        .iter()
        .zip(features)
        .map(|(r, f)| VideoRecord { features: f, ..r.clone() })
        .collect()
}

/// Row-wise concatenation `[a | b]` of two N-row feature matrices.
pub fn concat_features(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch(format!("{} vs {} frames", a.rows(), b.rows())));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Tensor::matrix(a.rows(), a.cols() + b.cols(), data)
}
