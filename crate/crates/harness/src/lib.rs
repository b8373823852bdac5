//! Experiment drivers and file formats around `fefv_core`.
//!
//! `config` reads and validates experiment files, `driver` runs one
//! experiment with per-step diagnostics, `convergence` runs refinement
//! studies, `verify` and `rates` hold the randomized property suites, and
//! `output` writes CSV, VTK and MatrixMarket files.

pub mod config;
pub mod convergence;
pub mod driver;
pub mod output;
pub mod presets;
pub mod rates;
pub mod verify;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Scheme(#[from] fefv_core::Error),
    #[error("level {level} (n = {n}): {source}")]
    Level {
        level: usize,
        n: usize,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
