//! Hash families, CountSketch, TensorSketch and the block-concatenated global
//! sketch over mixed vector/matrix gradients.

mod count_sketch;
mod fft;
mod hash;
mod plan;
mod tensor_sketch;

pub use count_sketch::{count_sketch, CountSketch};
pub use fft::FftPlan;
pub use hash::{HashFamily, MERSENNE_61};
pub use plan::{
    global_sketch, PlanDocument, PlanTensorEntry, PlannedTensor, SketchPlan, SketchedVector,
    TensorKind, TensorMap,
};
pub use tensor_sketch::{tensor_sketch_outer_sum, tensor_sketch_pair, TensorSketch, TsScratch};
