//! File formats, experiment commands and the invariant suite for the
//! `ortho-hydra` command-line tool.

pub mod commands;
pub mod config;
pub mod container;
pub mod csvlog;
pub mod error;
pub mod manifest;
pub mod verify;

pub use error::{exit, CliError, Result};
