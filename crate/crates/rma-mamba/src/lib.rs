//! File formats, dataset ingestion and the command line around `rma-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod image_io;

pub use error::{Error, Result};
