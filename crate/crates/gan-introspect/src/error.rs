//! Crate-wide error type.

use thiserror::Error;

/// Every fallible operation in the crate reports one of these variants.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data contains NaN/Inf or violates a basic data invariant.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// SVD reduction was asked to span an (effectively) zero matrix.
    #[error("degenerate subspace: {0}")]
    DegenerateSubspace(String),

    /// Two inputs that must agree on a dimension do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An auto-covariance block is singular and no ridge was supplied.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// Two activation dumps do not cover the same layer names.
    #[error("layer set mismatch: {0}")]
    LayerSetMismatch(String),

    /// Tensor geometry is incompatible with the requested operation.
    #[error("shape error: {0}")]
    ShapeError(String),

    /// An API precondition was violated (e.g. non-scalar loss).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Domain code outside [0, n_domains).
    #[error("unknown domain code {0}")]
    UnknownDomain(usize),

    /// Layer name not present in the network.
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    ConfigError(String),

    /// A container file failed magic/version/length/checksum validation.
    #[error("format error: {0}")]
    FormatError(String),

    /// A normalization statistic is degenerate (zero variance).
    #[error("degenerate stats: {0}")]
    DegenerateStats(String),

    /// Training produced a non-finite loss or gradient.
    #[error("divergence at iteration {iteration}: {what}")]
    DivergenceError { iteration: u64, what: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
