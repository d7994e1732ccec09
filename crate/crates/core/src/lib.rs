//! Chat-recording audit pipeline: frames to anonymized transcripts,
//! moderation-event profiles, LLM pre-filter verdicts and saturation-driven
//! review sampling.

pub mod command;
pub mod config;
pub mod convo;
pub mod error;
pub mod evalkit;
pub mod fixture;
pub mod fsutil;
pub mod glyph;
pub mod imgproc;
pub mod ingest;
pub mod llmfilter;
pub mod modevents;
pub mod ocr;
pub mod pipeline;
pub mod review;
pub mod sampler;
pub mod synth;
pub mod transcript;

pub use error::{Error, Result};
