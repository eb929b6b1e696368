//! Command-line orchestration: configuration, eigensystem cache, task
//! pipelines and column-text output.

pub mod cache;
pub mod config;
pub mod error;
pub mod table;
pub mod tasks;

pub use config::{parse_args, ParseOutcome, RunConfig, Task};
pub use error::{CliError, Result};
pub use table::ResultTable;
