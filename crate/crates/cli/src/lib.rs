//! Command-line pipeline and local HTTP service for clustering-diff
//! evaluation runs.

pub mod error;
pub mod pipeline;
pub mod run;
pub mod server;

pub use error::{CliError, CliResult};
pub use run::{RunDir, RunManifest};
