//! Command-line driver: run configuration and experiment commands.

pub mod commands;
pub mod config;
