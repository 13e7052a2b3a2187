//! Experiment harnesses: verification suite, fidelity benchmark, parity
//! training presets, cycle analysis and SDI energy.

pub mod cycle;
pub mod energy;
pub mod fidelity;
pub mod kmeans;
pub mod parity_run;
pub mod pca;
pub mod verify;

pub use cycle::{analyze_cycle, analyze_trajectory, CycleOptions, CycleReport, ProxyReport};
pub use energy::{late_mass, query_energy, read_difficulty_csv, sdi_energy, EnergyReport};
pub use fidelity::{bench_fidelity, FidelityBench, FidelityRow, FidelitySetup};
pub use kmeans::{kmeans, KMeans};
pub use parity_run::{train_parity, ParityPreset, ParityRun, ParitySummary, Preset};
pub use pca::{pca, Pca};
pub use verify::{run_verify, SignMutation, VerifyConfig, VerifyReport};
