//! Crate-wide error type.
//!
//! Variants map onto the process exit codes used by the CLI: configuration
//! and input problems, I/O, file-format violations, and numeric failures are
//! kept distinct so callers can react differently to each.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Two operands that must agree in shape do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An index or window falls outside the image.
    #[error("out of bounds: {0}")]
    Bounds(String),

    /// Input data is unusable (NaN/Inf pixels, empty sample, ...).
    #[error("bad data: {0}")]
    Data(String),

    /// A configuration value is out of its allowed range.
    #[error("bad config: {0}")]
    Config(String),

    /// A user-supplied argument is inconsistent (wrong action index,
    /// mismatched report sets, ...).
    #[error("bad input: {0}")]
    Input(String),

    /// An operation was called in a state that does not permit it.
    #[error("bad state: {0}")]
    State(String),

    /// A binary or text artifact violates its file format.
    #[error("format error: {0}")]
    Format(String),

    /// A computation produced non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
