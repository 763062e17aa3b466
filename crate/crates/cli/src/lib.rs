//! Library side of the `eqtri` command-line tool.

pub mod commands;
pub mod config;
pub mod output;

/// Environment variable overriding the number of worker threads.
pub const WORKERS_ENV: &str = "EQTRI_WORKERS";
