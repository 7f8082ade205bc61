//! Library half of the `ccvfm` binary: run configuration and subcommands.

pub mod commands;
pub mod config;
