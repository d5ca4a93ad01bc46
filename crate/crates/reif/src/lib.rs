//! File formats, the experiment runner and the command-line front end for
//! `reif-core`.

pub mod artifacts;
pub mod dataset_io;
pub mod error;
pub mod experiment;
pub mod runner;

pub use error::{Error, ExitKind, Result};
