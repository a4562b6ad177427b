//! File formats, reports, and the command-line driver for the attention-based
//! Urdu caption generator. All of the numerics live in `attncap-core`; this
//! crate owns everything that touches the filesystem.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod fgrd;
pub mod maps;
pub mod report;
pub mod textdata;
pub mod toy;

pub use error::{CliError, FormatError};
