//! File formats, synthetic corpora, run pipelines and the `evseq` command
//! line, on top of the allocation-only `evseq-core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod provenance;
pub mod synthetic;

pub use error::{Error, Result};
