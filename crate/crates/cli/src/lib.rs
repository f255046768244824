//! Library half of the `neuroscore` binary: configuration, subcommand
//! implementations, and the rating sink. The binary in `main.rs` is a thin
//! argument-parsing shell over these so integration tests can drive the
//! same code paths directly.

pub mod commands;
pub mod config;
pub mod score;
pub mod sink;

pub use config::PipelineConfig;
