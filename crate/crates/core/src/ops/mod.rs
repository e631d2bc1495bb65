//! Differentiable operations, exposed as methods on [`Tape`](crate::Tape).
//!
//! Each submodule holds the forward kernel, the backward rule and the
//! `Tape` method for a family of operations.

mod conv;
mod elementwise;
mod linear;
mod norm;
mod permute;
mod reduce;
mod resample;

pub use conv::{conv2d_forward, Conv2dSpec};
pub use elementwise::{sigmoid, softplus, Activation};
pub use resample::{bilinear_resize, nearest_resize};
