//! File formats, the cross-validation harness and the command-line front end
//! around `gapfill-core`.

pub mod checkpoint;
pub mod cli;
pub mod csvio;
mod error;
pub mod harness;
pub mod report;

pub use error::{Error, Result};
