//! Core of a LightXML-style extreme multi-label text classifier.
//!
//! Everything here is pure computation over `alloc` collections: a small
//! reverse-mode differentiation tape, AdamW and weight averaging, balanced
//! label clustering, a miniature transformer encoder, the cluster-recall
//! generator and label-rank discriminator, joint training with dynamic (or
//! static) negative sampling, and top-k prediction with P@k evaluation.
//!
//! File formats, checkpoints and the command line live in the `lightxml`
//! companion crate.
#![no_std]

extern crate alloc;

pub mod cluster;
pub mod data;
pub mod encoder;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod predict;
pub mod rank;
pub mod real;
pub mod recall;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
