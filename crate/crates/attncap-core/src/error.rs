use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Error type shared by every module in this crate.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand shapes are incompatible for the attempted operation.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Input lies outside the mathematical domain of the operation.
    Domain { op: &'static str, detail: String },
    /// An API precondition was violated by the caller.
    Contract(String),
    /// A configuration value is outside its legal range.
    Config(String),
}

pub type Result<T> = core::result::Result<T, CoreError>;

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Shape { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: {lhs:?} vs {rhs:?}")
            }
            CoreError::Domain { op, detail } => write!(f, "domain error in {op}: {detail}"),
            CoreError::Contract(msg) => write!(f, "contract violation: {msg}"),
            CoreError::Config(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}
