//! Error types for the IO layer and their exit-code mapping.
//!
//! Every failure surfaces to the operator as a single line `E<code>: message`
//! on stderr, where the code is also the process exit code: 1 for usage
//! problems, 2 for data and format problems.

use std::fmt;

use attncap_core::CoreError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// A malformed binary or text artifact, with the byte offset (binary) or line
/// number (text) where parsing stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatError {
    pub offset: usize,
    pub message: String,
}

impl FormatError {
    pub fn new(offset: usize, message: impl Into<String>) -> FormatError {
        FormatError {
            offset,
            message: message.into(),
        }
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at offset {})", self.message, self.offset)
    }
}

impl std::error::Error for FormatError {}

/// Operator-facing error: exit code plus a one-line message.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> CliError {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    /// The single-line `E<code>: message` form printed to stderr.
    pub fn render(&self) -> String {
        let flat = self.message.replace('\n', "; ");
        format!("E{}: {}", self.code, flat)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl std::error::Error for CliError {}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> CliError {
        CliError::data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::data(e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        match e {
            // Bad numeric configuration comes from flags or the config file.
            CoreError::Config(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}
