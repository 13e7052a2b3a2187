//! Step-decomposed influence for weight-tied looped transformers.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod model;
pub mod parity;
pub mod sketch;
pub mod stats;
pub mod tensor;
pub mod variance;

pub use error::{Error, Result};
pub use tensor::{NamedTensors, Tensor};
