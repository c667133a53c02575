//! Library surface of the pipeline runner, shared by the `ccg` binary and
//! the acceptance suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
