//! Configuration files, CSV output and study drivers behind the `layerfet`
//! command-line tool.

pub mod cli;
pub mod config;
pub mod output;
pub mod study;

pub use config::{ConfigError, RunConfig};
