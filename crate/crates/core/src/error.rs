use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("near-singular modal denominator at order {order}: |d| = {modulus:e}")]
    Resonance { order: i64, modulus: f64 },
    #[error("linear system ill-conditioned (estimated condition number {0:e})")]
    IllConditioned(f64),
    #[error("no data: {0}")]
    NoData(String),
    #[error("reconstruction failed: {0}")]
    ReconstructionFailed(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Consistency(_)
                | Error::Parse { .. }
                | Error::InvalidGeometry(_)
                | Error::Domain(_)
                | Error::Unsupported(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
