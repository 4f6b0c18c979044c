use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("Green's function singular: emitters {i} and {j} coincide")]
    Singularity { i: usize, j: usize },

    #[error("Green's function singular at zero separation")]
    ZeroSeparation,

    #[error("degenerate array: {0} emitters remain, at least 2 required")]
    DegenerateArray(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("non-finite data: {0}")]
    Data(String),

    #[error("model violation: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Domain(_) | Error::Io(_) => 1,
            Error::Capacity(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
