use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("{what} is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { what: String, deviation: f64 },

    #[error("{what} is not positive semidefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { what: String, min_eigenvalue: f64 },

    #[error("{what} is singular; {hint}")]
    Singular { what: String, hint: String },

    #[error("{what} is rank deficient (rank {rank} < {required}); regularization is out of scope")]
    RankDeficient {
        what: String,
        rank: usize,
        required: usize,
    },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn mismatch(what: impl Into<String>, expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected: format!("{}x{}", expected.0, expected.1),
            got: format!("{}x{}", got.0, got.1),
        }
    }

    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// Wraps an error with the name of the optimization stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
