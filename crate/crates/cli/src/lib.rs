//! Experiment configuration and the commands behind the `pathgat` binary.

pub mod commands;
pub mod config;
