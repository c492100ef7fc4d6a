//! File formats, checkpoints and the command-line front end for
//! [`sparse_prompt_core`].

pub mod artifacts;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod embedding_file;
pub mod error;

pub use error::CliError;
