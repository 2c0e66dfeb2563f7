//! Zero-shot emotion scoring from dual-encoder audio/text embeddings, late
//! fused with speech foundation-model features into a trained linear head.
//!
//! Encoders stay outside this crate: every embedding arrives through the
//! `ZSEM` file format in [`embed`]. [`embed::synth`] provides a synthetic
//! stand-in for tests and demos.

pub mod cli;
pub mod embed;
pub mod fusion;
pub mod grid;
pub mod head;
pub mod manifest;
pub mod metrics;
pub mod prompt;
pub mod zeroshot;
