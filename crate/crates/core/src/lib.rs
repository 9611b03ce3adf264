//! Multiplicative multimodal fusion.
//!
//! Per-modality classifiers whose losses down-weight each other, a boosted
//! margin-gated variant, and multiplicative selection over additively mixed
//! modality subsets, next to early, late and additive fusion baselines. All
//! of it runs on a small reverse-mode autodiff engine in [`tensor`].

pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
