use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid panel: {0}")]
    Panel(String),

    #[error("invalid kernel parameters: {0}")]
    KernelParams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive semi-definite even with jitter {max_jitter:e} (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64, max_jitter: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("too few draws: {0}")]
    TooFewDraws(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotPsd { .. }
            | Error::NotSymmetric(_)
            | Error::Numerical(_)
            | Error::TooFewDraws(_) => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}
