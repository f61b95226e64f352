use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the domain of a constitutive function.
    #[error("domain error: {0}")]
    Domain(String),
    /// Shape mismatch or otherwise malformed field.
    #[error("field error: {0}")]
    Field(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("CFL violation: {0}")]
    Cfl(String),
    #[error("positivity lost: {0}")]
    Positivity(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error stems from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Cfl(_) | Error::Positivity(_) | Error::Numerical(_)
        )
    }
}
