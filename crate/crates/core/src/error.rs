use thiserror::Error;

use crate::moments::MomentPair;

/// Errors produced by the numerical routines and their I/O helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not reach tolerance {tolerance:e} within {max_subdivisions} subdivisions (estimated error {estimate:e})")]
    Convergence {
        tolerance: f64,
        max_subdivisions: usize,
        estimate: f64,
    },

    #[error("root finder found no solution: {0}")]
    NoSolution(String),

    #[error("moment iteration diverged after {} steps", trajectory.len())]
    Divergence { trajectory: Vec<MomentPair> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged {
        epoch: usize,
        history: crate::train::TrainHistory,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
