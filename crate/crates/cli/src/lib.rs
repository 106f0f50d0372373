//! Experiment pipelines over the editing lab: configuration, artifacts on
//! disk, and one function per subcommand.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;

pub use artifact::{Artifact, Provenance, Workspace};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
