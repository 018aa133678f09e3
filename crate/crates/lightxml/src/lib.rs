//! Files, checkpoints, run manifests and the command line around
//! [`lightxml_core`].

pub mod checkpoint;
pub mod cli;
pub mod cluster_file;
pub mod corpus_io;
pub mod diagnostics;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod settings;
pub mod sparse_file;

pub use error::{CliError, Result};
