//! Library side of the `linenarrow` command: configuration, ingestion,
//! pipeline orchestration and artifact writers.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
pub mod peak_table;
pub mod pipeline;

pub use error::{CliError, CliResult};
