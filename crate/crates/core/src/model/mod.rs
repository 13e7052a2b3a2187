//! Weight-tied looped transformer with a hand-derived backward pass that
//! exposes per-step gradient factors.

mod backward;
mod checkpoint;
mod config;
mod forward;
mod params;
mod train;

pub use backward::{
    backward_into, backward_with_hooks, first_live_step, gradient, materialize_step_gradients,
    FactorBlock, FactorSink, Gradients, StepFactors, TensorFactors,
};
pub use checkpoint::{load_manifest, read_checkpoint, save_manifest, write_checkpoint, Checkpoint, Manifest, ManifestEntry};
pub use config::{Injection, ModelConfig, Nonlinearity};
pub use forward::{forward, loss, readout_logits, Example, StepTrace};
pub use params::{
    block_of, body_shapes, body_subset, param_layout, Block, Parameters, BODY_OFFSET, BODY_TENSORS,
    NUM_TENSORS,
};
pub use train::{evaluate, train_sgd, BatchSource, TrainLog, TrainOptions};
