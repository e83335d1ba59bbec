use thiserror::Error;

/// Error type shared by every numerical stage.
///
/// The three variants deliberately mirror how callers have to react:
/// bad inputs are caller bugs, regime violations mean the requested state is
/// outside the small-amplitude theory (retry with different parameters), and
/// numerics failures mean an iteration diverged or an integrator gave up.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The request is structurally fine but falls outside the regime in which
    /// the construction is valid (kernel not simple, surface too steep,
    /// velocity losing transversality, degenerate Bernoulli function, ...).
    #[error("out of regime: {0}")]
    OutOfRegime(String),

    #[error("numerical failure: {0}")]
    Numerics(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn regime(msg: impl Into<String>) -> Self {
        Error::OutOfRegime(msg.into())
    }

    pub fn numerics(msg: impl Into<String>) -> Self {
        Error::Numerics(msg.into())
    }
}
