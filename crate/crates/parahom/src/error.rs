use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("ellipticity violation: {0}")]
    Ellipticity(String),

    #[error("stability violation: {0}")]
    Stability(String),

    #[error("box too small: {0}")]
    BoxTooSmall(String),

    #[error("kernel tail above tolerance: {0}")]
    TailTolerance(String),

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("fit is underdetermined: {0}")]
    Underdetermined(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
