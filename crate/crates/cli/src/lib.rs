//! Configuration parsing and commands behind the `pfd` binary.

pub mod commands;
pub mod config;
