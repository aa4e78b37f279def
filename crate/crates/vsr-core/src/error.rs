//! Error type shared across the engine.
//!
//! The variants are coarse on purpose: callers mostly care about which class
//! of failure occurred (bad configuration, bad data, numeric trouble) so that
//! a front end can map them to exit codes.

use alloc::string::String;
use core::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shapes of tensor operands do not line up.
    Shape(String),
    /// A configuration value is out of range or inconsistent.
    Config(String),
    /// Input data (corpus, manifest, checkpoint) is malformed or missing.
    Data(String),
    /// A numeric invariant was violated (non-finite value, failed check).
    Numeric(String),
    /// A CTC target cannot be aligned to the available frames.  This is a
    /// typed outcome rather than an infinite loss so callers never see NaN.
    InfeasibleAlignment { frames: usize, required: usize },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::InfeasibleAlignment { frames, required } => write!(
                f,
                "infeasible alignment: target needs {required} frames but only {frames} are available"
            ),
        }
    }
}

impl core::error::Error for Error {}
