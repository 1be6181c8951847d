use thiserror::Error;

/// Errors produced by the fitting and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path} (row {row}): {msg}")]
    Parse { path: String, row: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("seasonal fit failed: {0}")]
    SeasonalFit(String),

    #[error("VAR fit failed: {0}")]
    VarFit(String),

    #[error("skew-t fit failed: {0}")]
    SkewTFit(String),

    #[error("simulation refused: {0}")]
    Simulation(String),

    #[error("json error on {path}: {msg}")]
    Json { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }

    pub fn json(path: &std::path::Path, msg: impl ToString) -> Self {
        Error::Json { path: path.display().to_string(), msg: msg.to_string() }
    }
}
