use thiserror::Error;

/// Errors produced by data ingestion, estimation and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("level error: {0}")]
    Level(String),

    #[error("optimizer failed to converge: {message}")]
    Convergence {
        message: String,
        last_iterate: Vec<f64>,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("insufficient exceedances: got {got}, need at least {need}")]
    InsufficientExceedances { got: usize, need: usize },

    #[error("degenerate bandwidth: all VaR residuals share the same median absolute deviation of zero")]
    DegenerateBandwidth,

    #[error("inference unavailable: {0}")]
    InferenceUnavailable(String),

    #[error("window error: {0}")]
    Window(String),

    #[error("update domain error: nonpositive risk contribution for component {component}")]
    UpdateDomain { component: usize },

    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
