use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid construction parameters (sketch dimension, plan layout, model shape).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed user input such as an out-of-vocabulary token.
    #[error("input error: {0}")]
    Input(String),

    #[error("sketch plan mismatch: {left:#018x} vs {right:#018x}")]
    PlanMismatch { left: u64, right: u64 },

    #[error("feature space mismatch: {0}")]
    FeatureSpace(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("conservation violated for pair ({train}, {test}): tracin {tracin} vs step sum {step_sum}")]
    Conservation {
        train: usize,
        test: usize,
        tracin: f64,
        step_sum: f64,
    },

    #[error("parameter budget exceeded: {params} > {budget}")]
    Budget { params: usize, budget: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
