use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pattern point {index} has non-positive depth {depth}")]
    NonPositiveDepth { index: usize, depth: f64 },

    #[error("closed loop diverged at step {step}: |e| = {error_norm}")]
    Diverged { step: usize, error_norm: f64 },

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("trajectory has {len} samples, at least 2 are required")]
    TooShort { len: usize },

    #[error("demonstrations have unequal lengths ({expected} vs {found})")]
    UnequalLengths { expected: usize, found: usize },

    #[error("gaussian component {index} collapsed below the regularization floor")]
    DegenerateComponent { index: usize },

    #[error("lyapunov fit left {fraction:.4} of the training points violating (ceiling {ceiling})")]
    OptimizationFailed { fraction: f64, ceiling: f64 },

    #[error("lyapunov gradient vanished at |eps| = {norm}")]
    VanishingGradient { norm: f64 },

    #[error("diffeomorphic matching stalled after {steps} steps (residual {residual})")]
    Stalled { steps: usize, residual: f64 },

    #[error("inverse of diffeomorphism step {step} did not converge")]
    InverseDiverged { step: usize },

    #[error("diffeomorphism jacobian is near singular (condition number {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
