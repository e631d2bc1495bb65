//! Allocation-only core of the RMA-Mamba segmentation model.
//!
//! Everything here is pure computation: a dense tensor with a reverse-mode
//! tape, the selective-scan state-space kernels and their 2D four-route
//! wrapper, the VSS block, the hierarchical encoder, the reverse attention
//! decoder, losses, metrics and the training loop. File formats, image
//! decoding and the command line live in the `rma-mamba` crate.

#![no_std]

extern crate alloc;

pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod real;
pub mod ss2d;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vss;

pub use error::{Error, Result};
pub use model::{AttentionMode, Model, ModelConfig, Variant};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
