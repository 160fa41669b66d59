use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integrator not supported for {0}")]
    UnsupportedIntegrator(String),

    #[error("corrupted spectral state: {0}")]
    CorruptedState(String),

    #[error("initial-condition sampler failed: {0}")]
    Sampler(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("eigenvalue iteration did not converge ({found} of {total} eigenvalues found)")]
    NoConvergence {
        found: usize,
        total: usize,
        partial: Vec<num_complex::Complex64>,
    },

    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("unknown tape node {0}")]
    UnknownNode(usize),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line tool: 2 for bad input or
    /// files, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_)
            | Error::NoConvergence { .. }
            | Error::Divergence { .. }
            | Error::CorruptedState(_) => 3,
            _ => 2,
        }
    }
}
