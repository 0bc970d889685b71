//! Explainable visual question answering over histopathology images.
//!
//! The crate turns attention tensors from a vision-language model into
//! normalized heatmaps and ranked regions, drives question rewriting and a
//! six-step reasoning chain through language-model backends, scores the final
//! explanation, and compares configurations statistically.
//!
//! Numeric kernels are generic over [`Scalar`]; the `f64` aliases below are
//! what the pipeline uses.

// `!(x > a)` style range checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod backends;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod reasoning;
pub mod reformulation;
pub mod regions;
pub mod render;
pub mod resources;
pub mod scalar;
pub mod stats;
pub mod text;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Heatmap = attention::AttentionHeatmap<f64>;
pub type Region = regions::RegionBox<f64>;
pub type Features = attention::FeatureStack<f64>;
pub type Gradients = attention::GradientStack<f64>;
