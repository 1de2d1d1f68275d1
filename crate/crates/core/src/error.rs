//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quadrature spec: {0}")]
    Quadrature(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid model input: {0}")]
    Model(String),

    #[error("integration blew up at t = {t}: {detail}")]
    Integration { t: f64, detail: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence {
        epoch: usize,
        history: Vec<(usize, f64)>,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<String>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
