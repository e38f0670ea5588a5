use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Config,
    Numeric,
    Convergence,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::Config => "config",
            ErrorCategory::Numeric => "numeric",
            ErrorCategory::Convergence => "convergence",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Io => 1,
            ErrorCategory::Config => 2,
            ErrorCategory::Numeric => 3,
            ErrorCategory::Convergence => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),

    #[error("invalid value for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance is rank deficient in directions {directions:?} (eigenvalues {eigenvalues:?})")]
    RankDeficient {
        directions: Vec<usize>,
        eigenvalues: Vec<f64>,
    },

    #[error("latent {latent} autoregression is not stable (spectral radius {radius})")]
    Unstable { latent: usize, radius: f64 },

    #[error("latent noise constraint violated: 1 - sum(beta * gamma) = {value}")]
    NoiseConstraint { value: f64 },

    #[error("{what} is singular at time index {index}")]
    Singular { what: &'static str, index: usize },

    #[error("second-moment matrix is singular; collapsed latent dimensions {latents:?}")]
    CollapsedLatents { latents: Vec<usize> },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("EM iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Convergence(String),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } | Error::Parse(_) => ErrorCategory::Io,
            Error::Config { .. } | Error::DimensionMismatch { .. } | Error::Unstable { .. } => {
                ErrorCategory::Config
            }
            Error::Iteration { source, .. } => source.category(),
            Error::Convergence(_) => ErrorCategory::Convergence,
            Error::RankDeficient { .. }
            | Error::NoiseConstraint { .. }
            | Error::Singular { .. }
            | Error::CollapsedLatents { .. }
            | Error::Numeric(_) => ErrorCategory::Numeric,
        }
    }
}
