//! Query-focused summarization toolkit.
//!
//! Two families of systems are provided on top of a small from-scratch
//! encoder-decoder transformer ([`nn`]):
//!
//! * two-step pipelines: a passage scorer from [`extractors`] ranks source
//!   utterances, the ranked list is concatenated and truncated to a token
//!   budget, and an abstractor summarizes `query [SEP] extract`;
//! * end-to-end summarizers: truncated dense input, local+global sparse
//!   attention, and segment encoding ([`segenc`]) where query-prefixed
//!   overlapping segments are encoded independently and fused for the decoder.
//!
//! Supervision for the scorers comes from [`relevance`], evaluation from
//! [`rouge`] and [`eval`], and orchestration of epochs, checkpoint selection
//! and transfer chains from [`train`].

pub mod corpus;
pub mod error;
pub mod eval;
pub mod extractors;
pub mod nn;
pub mod relevance;
pub mod rouge;
pub mod segenc;
pub mod segmenter;
pub mod summarizer;
pub mod train;

pub use error::{Error, Result};
