//! TracIn and step-decomposed influence from exact or sketched per-step
//! features.

mod cache;
mod features;
mod influence;
mod report;

pub use cache::{read_feature_cache, write_feature_cache};
pub use features::{
    body_plan_slots, featurize_checkpoint, featurize_exact, featurize_sketched, ExampleFeatures,
    FeatureMode, FeatureSet, FeatureSpace, SketchFeaturizer, DEFAULT_EXACT_BUDGET,
};
pub use influence::{
    fidelity_report, sdi_matrix, sdi_test_side, sdi_train_side, tracin, FidelityReport,
    InfluenceTrajectory, Mode, SdiAccumulator, StepMatrix, CONSERVATION_TOL,
};
pub use report::{InfluenceReport, PairRecord, SCHEMA_VERSION};
