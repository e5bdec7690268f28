//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors reported by simulation and aggregation operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix had a different length than its consumer expected.
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },
    /// An operation required more client rows than were supplied.
    TooFewClients { required: usize, actual: usize },
    /// An operation received an empty collection it cannot work with.
    EmptyInput(&'static str),
    /// A non-finite value (NaN or infinity) reached a numeric routine.
    NonFinite(&'static str),
    /// A configuration value violated its documented constraints.
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                expected,
                actual,
                context,
            } => write!(
                f,
                "dimension mismatch in {context}: expected {expected}, got {actual}"
            ),
            Error::TooFewClients { required, actual } => {
                write!(f, "need at least {required} clients, got {actual}")
            }
            Error::EmptyInput(what) => write!(f, "{what} must not be empty"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
