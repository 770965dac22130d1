//! File formats, parallel harness and command line front end for
//! [`predrec_core`].
//!
//! The `predrec` binary exposes the estimators as subcommands (`fit`, `prml`,
//! `fdr`, `regress`, `npmle`, `predict`, `simulate`). Each run writes a JSON
//! summary that embeds the resolved configuration and seed, plus CSV tables
//! ready for plotting.

pub mod artifact;
pub mod cli;
pub mod error;
pub mod harness;
pub mod ingest;

pub use error::{CliError, Result};
