use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A spherical-harmonic index with |m| > l.
    #[error("invalid harmonic index: |m| = {m} exceeds degree l = {ell}")]
    InvalidIndex { ell: u32, m: i32 },

    /// Grid cannot resolve the requested band limit.
    #[error(
        "grid too coarse for band limit {band_limit}: need at least {need_theta} colatitude \
         nodes and {need_phi} longitudes, have {have_theta} x {have_phi}"
    )]
    GridTooCoarse {
        band_limit: u32,
        need_theta: usize,
        need_phi: usize,
        have_theta: usize,
        have_phi: usize,
    },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration; the message carries the offending field path.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
