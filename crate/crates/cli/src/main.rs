use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdikit::analysis::Preset;

mod commands;

#[derive(Parser)]
#[command(name = "sdikit", version, about = "Step-decomposed influence for looped transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Statistical checks of the sketches against the exact variance oracles.
    VerifySketch(VerifyArgs),
    /// Relative error of sketched vs exact SDI across sketch dimensions.
    BenchFidelity(FidelityArgs),
    /// Curriculum training on parity; writes checkpoints and a manifest.
    TrainParity(TrainArgs),
    /// TracIn and SDI from a checkpoint manifest.
    ComputeSdi(SdiArgs),
    /// Mechanistic readouts of an alternating probe.
    AnalyzeCycle(CycleArgs),
    /// Per-step SDI energy curves from a compute-sdi report.
    SdiEnergy(EnergyArgs),
}

#[derive(Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 20_000)]
    pub trials: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64])]
    pub m: Vec<usize>,
    /// Map sign bits to {0, 1} instead of {-1, +1}; the suite must fail.
    #[arg(long)]
    pub mutate_sign: bool,
}

#[derive(Args)]
pub struct FidelityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 512, 1024, 2048, 4096])]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long, default_value = "micro")]
    pub preset: Preset,
    #[arg(long, default_value_t = 8)]
    pub n_train: usize,
    #[arg(long, default_value_t = 4)]
    pub n_test: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "micro")]
    pub preset: Preset,
    /// Fail unless in-distribution accuracy reaches this value.
    #[arg(long)]
    pub require_accuracy: Option<f64>,
}

#[derive(Args)]
pub struct SdiArgs {
    #[command(flatten)]
    pub common: Common,
    /// Path to a checkpoint manifest.json.
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Training examples as JSON lines; sampled from the curriculum range when absent.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub n_train: usize,
    /// Query examples as JSON lines; both alternating probes when absent.
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    pub probe_length: usize,
    #[arg(long, default_value_t = 1024)]
    pub m: usize,
    /// Analysis horizon; defaults to the longest example's n + 2.
    #[arg(long)]
    pub tau: Option<usize>,
    /// Use exact (materialized) features instead of sketches.
    #[arg(long)]
    pub exact: bool,
    /// Directory for per-checkpoint feature caches.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct CycleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Checkpoint index in the manifest; the last one when absent.
    #[arg(long)]
    pub checkpoint_index: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub probe_length: usize,
    #[arg(long)]
    pub start_with_one: bool,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 95.0)]
    pub percentile: f64,
    #[arg(long, default_value_t = 256)]
    pub calibration: usize,
    #[arg(long, default_value_t = 1024)]
    pub evaluation: usize,
    /// Longest in-distribution length; defaults to the manifest's training horizon - 2.
    #[arg(long)]
    pub id_max_length: Option<usize>,
}

#[derive(Args)]
pub struct EnergyArgs {
    /// SDI report written by compute-sdi.
    #[arg(long)]
    pub input: PathBuf,
    /// CSV with columns test_id,difficulty.
    #[arg(long)]
    pub difficulty: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub bins: usize,
    /// Energy curve CSV; late mass goes next to it as `<stem>_late_mass.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SDIKIT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("SDIKIT_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("SDIKIT_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> anyhow::Result<bool> {
        configure_threads()?;
        match cli.command {
            Command::VerifySketch(a) => commands::verify_sketch(&a),
            Command::BenchFidelity(a) => commands::bench_fidelity(&a),
            Command::TrainParity(a) => commands::train_parity(&a),
            Command::ComputeSdi(a) => commands::compute_sdi(&a),
            Command::AnalyzeCycle(a) => commands::analyze_cycle(&a),
            Command::SdiEnergy(a) => commands::sdi_energy(&a),
        }
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
