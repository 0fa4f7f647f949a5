use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum GlrmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}, column {column}: {message}")]
    Cell {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid table: {0}")]
    Table(String),

    #[error("{loss}: {message}")]
    Domain { loss: &'static str, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("infeasible starting point: {0}")]
    Infeasible(String),

    #[error("certificate unavailable: {0}")]
    Certificate(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, GlrmError>;
