//! Unified event detection and event captioning as sequence generation.
//!
//! This crate holds the allocation-only algorithmic core: a small reverse-mode
//! autodiff engine, the multi-stream transformer with its masking heads,
//! masked pre-training and autoregressive fine-tuning, the concept-feature
//! recurrent classifier, and every dense-video-captioning metric. It does not
//! touch the filesystem; the `evseq` crate provides IO and the CLI.

#![no_std]

extern crate alloc;

pub mod concept;
pub mod corpus;
pub mod error;
pub mod event_codec;
pub mod generation;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pretraining;
pub mod robustness;
pub mod submission;
pub mod text;
pub mod train;

pub use error::{Error, Result};
