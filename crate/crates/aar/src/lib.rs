//! File formats, checkpoints, configuration, experiments and the command
//! line around the `aar-core` algorithms.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod planted;
pub mod pipeline;
pub mod synth;

pub use error::{AarError, Result};
