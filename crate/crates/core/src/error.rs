use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("kernel must have odd side lengths, got {height}x{width}")]
    EvenKernel { height: usize, width: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("sampler produced a non-finite state at step {step} (t = {timestep})")]
    NonFiniteStep { step: usize, timestep: usize },

    #[error("attempted to update frozen parameters: {0}")]
    Frozen(String),

    #[error("quaternion phase is undefined for the zero quaternion")]
    ZeroQuaternion,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
