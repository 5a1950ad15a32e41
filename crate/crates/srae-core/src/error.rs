use alloc::string::String;
use core::fmt;

/// Errors produced by the numeric core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes are inconsistent with an operation. Carries the name of
    /// the graph node (or call site) where the mismatch was detected.
    Shape { node: String, msg: String },
    /// An operation produced a NaN or infinity.
    NonFinite { node: String },
    /// A contract precondition was violated (bad config, bad label, ...).
    Contract(String),
    /// A serialized checkpoint could not be decoded.
    Checkpoint(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn shape(node: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Shape { node: node.into(), msg: msg.into() }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { node, msg } => write!(f, "shape mismatch at `{node}`: {msg}"),
            Error::NonFinite { node } => write!(f, "non-finite value produced at `{node}`"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Checkpoint(msg) => write!(f, "{msg}"),
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for Error {}
