use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use sdikit::analysis::{
    self, CycleOptions, FidelitySetup, ParityPreset, Preset, VerifyConfig,
};
use sdikit::engine::{
    featurize_checkpoint, write_feature_cache, FeatureMode, InfluenceReport, SdiAccumulator,
    DEFAULT_EXACT_BUDGET, SCHEMA_VERSION,
};
use sdikit::model::{body_shapes, load_manifest, save_manifest, Parameters, TrainLog};
use sdikit::parity::{alternating_probe, gen_alternating, gen_parity, read_jsonl, ParityExample};
use sdikit::sketch::SketchPlan;

use crate::{CycleArgs, EnergyArgs, FidelityArgs, SdiArgs, TrainArgs, VerifyArgs};

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn read_examples(path: &Path) -> Result<Vec<ParityExample>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_jsonl(BufReader::new(f))?)
}

pub fn verify_sketch(a: &VerifyArgs) -> Result<bool> {
    let report = analysis::run_verify(&VerifyConfig {
        trials: a.trials,
        m_list: a.m.clone(),
        seed: a.common.seed,
        mutation: a.mutate_sign.then_some(analysis::SignMutation::OffByOne),
    })?;
    write_json(&a.common.out, &report)?;
    for c in &report.checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(report.passed)
}

pub fn bench_fidelity(a: &FidelityArgs) -> Result<bool> {
    let (d, heads) = match a.preset {
        Preset::Micro => (32, 4),
        Preset::Full => (256, 64),
    };
    let setup = FidelitySetup::parity(d, heads, a.n_train, a.n_test, a.common.seed)?;
    let bench = analysis::bench_fidelity(&setup, &a.m, a.seeds, a.common.seed)?;
    bench.write_csv(create(&a.common.out)?)?;
    for r in &bench.rows {
        eprintln!(
            "m={:5} sdi {:.4} ± {:.4}  tracin {:.4} ± {:.4}",
            r.m, r.mean_err_sdi, r.sd_err_sdi, r.mean_err_tracin, r.sd_err_tracin
        );
    }
    if let Some(s) = bench.slope_sdi {
        eprintln!("log-log slope (sdi) {s:.3}");
    }
    Ok(true)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    schema_version: u32,
    seed: u64,
    preset: &'a ParityPreset,
    #[serde(flatten)]
    result: &'a analysis::ParitySummary,
}

pub fn train_parity(a: &TrainArgs) -> Result<bool> {
    let mut preset = ParityPreset::of(a.preset);
    preset.model.seed ^= a.common.seed;
    preset.curriculum_seed ^= a.common.seed;
    let out = &a.common.out;
    fs::create_dir_all(out)?;
    let mut log = csv::Writer::from_writer(create(&out.join("train_log.csv"))?);
    log.write_record(["step", "loss", "eta", "grad_norm"])?;
    let mut io_err = None;
    let mut cb = |l: &TrainLog| {
        if (l.step + 1).is_multiple_of(100) {
            eprintln!("step {:6} loss {:.5}", l.step + 1, l.loss);
        }
        let rec = [
            l.step.to_string(),
            l.loss.to_string(),
            l.eta.to_string(),
            l.grad_norm.to_string(),
        ];
        if let Err(e) = log.write_record(rec) {
            io_err.get_or_insert(e);
        }
    };
    let run = analysis::train_parity(&preset, Some(&mut cb))?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    log.flush()?;
    save_manifest(out, &preset.model, &run.checkpoints)?;
    write_json(
        &out.join("summary.json"),
        &TrainSummary {
            schema_version: SCHEMA_VERSION,
            seed: a.common.seed,
            preset: &preset,
            result: &run.summary,
        },
    )?;
    eprintln!("train accuracy {:.4}", run.summary.train_accuracy);
    Ok(a
        .require_accuracy
        .is_none_or(|r| run.summary.train_accuracy >= r))
}

#[derive(Serialize)]
struct SdiSummary {
    schema_version: u32,
    mode: &'static str,
    m: Option<usize>,
    plan_id: Option<u64>,
    tau: usize,
    n_train: usize,
    n_query: usize,
    checkpoints: usize,
    /// Every query has zero SDI after its readout step.
    readout_causal: bool,
}

pub fn compute_sdi(a: &SdiArgs) -> Result<bool> {
    let (manifest, cks) = load_manifest(&a.checkpoints)?;
    let cfg = manifest.config;
    if cks.is_empty() {
        bail!("manifest lists no checkpoints");
    }
    let train = match &a.train {
        Some(p) => read_examples(p)?,
        None => gen_parity(a.n_train, (2, cfg.loop_horizon.saturating_sub(2).max(2)), a.common.seed)?,
    };
    let query = match &a.query {
        Some(p) => read_examples(p)?,
        None => vec![
            alternating_probe(a.probe_length, false)?,
            alternating_probe(a.probe_length, true)?,
        ],
    };
    let tau = a
        .tau
        .unwrap_or_else(|| train.iter().chain(&query).map(|e| e.horizon()).max().unwrap_or(1));
    let tr: Vec<_> = train.iter().map(ParityExample::to_example).collect();
    let te: Vec<_> = query.iter().map(ParityExample::to_example).collect();

    let plan = if a.exact {
        None
    } else {
        Some(SketchPlan::new(a.common.seed, a.m, &body_shapes(&cfg))?)
    };
    let mode = match &plan {
        Some(p) => FeatureMode::Sketched(p),
        None => FeatureMode::Exact {
            budget: DEFAULT_EXACT_BUDGET,
        },
    };
    let out = &a.common.out;
    fs::create_dir_all(out)?;
    if let Some(p) = &plan {
        fs::write(out.join("plan.json"), p.to_json()?)?;
    }
    let mut acc = SdiAccumulator::new(tr.len(), te.len());
    for ck in &cks {
        let ftr = featurize_checkpoint(ck, &cfg, &tr, &mode, tau)?;
        let fte = featurize_checkpoint(ck, &cfg, &te, &mode, tau)?;
        if let (Some(dir), Some(p)) = (&a.cache_dir, &plan) {
            fs::create_dir_all(dir)?;
            write_feature_cache(&dir.join(format!("train_{:08}.sdif", ck.step)), &ftr, p)?;
            write_feature_cache(&dir.join(format!("query_{:08}.sdif", ck.step)), &fte, p)?;
        }
        acc.add(&ftr, &fte, ck.eta)?;
        eprintln!("checkpoint {} done", ck.step);
    }
    let trajectories = acc.test_side()?;
    let report = InfluenceReport::from_trajectories(&trajectories);
    fs::write(out.join("sdi.json"), report.to_json()?)?;
    report.write_csv(create(&out.join("sdi.csv"))?)?;
    let train_side = InfluenceReport::from_trajectories(&acc.train_side()?);
    fs::write(out.join("sdi_train_side.json"), train_side.to_json()?)?;

    let mut profile = csv::Writer::from_writer(create(&out.join("profile.csv"))?);
    profile.write_record(["test_id", "step", "summed_sdi"])?;
    let mut causal = true;
    for (j, q) in query.iter().enumerate() {
        let mut sum = vec![0.0; tau];
        for p in report.pairs.iter().filter(|p| p.test_id == j) {
            for (s, v) in sum.iter_mut().zip(&p.steps) {
                *s += v;
            }
            causal &= p.steps.iter().skip(q.readout_step).all(|&v| v == 0.0);
        }
        for (t, v) in sum.iter().enumerate() {
            profile.write_record([j.to_string(), (t + 1).to_string(), v.to_string()])?;
        }
    }
    profile.flush()?;
    write_json(
        &out.join("summary.json"),
        &SdiSummary {
            schema_version: SCHEMA_VERSION,
            mode: if a.exact { "exact" } else { "sketched" },
            m: plan.as_ref().map(|p| p.sketch_dim()),
            plan_id: plan.as_ref().map(|p| p.id()),
            tau,
            n_train: tr.len(),
            n_query: te.len(),
            checkpoints: cks.len(),
            readout_causal: causal,
        },
    )?;
    if !causal {
        eprintln!("FAIL: nonzero SDI after the readout step");
    }
    Ok(causal)
}

pub fn analyze_cycle(a: &CycleArgs) -> Result<bool> {
    let (manifest, cks) = load_manifest(&a.checkpoints)?;
    let cfg = manifest.config;
    let idx = a.checkpoint_index.unwrap_or(cks.len().saturating_sub(1));
    let ck = cks
        .get(idx)
        .with_context(|| format!("checkpoint index {idx} out of range ({} available)", cks.len()))?;
    let params = Parameters::from_tensors(&cfg, ck.params.clone())?;
    let probe = alternating_probe(a.probe_length, a.start_with_one)?;
    let max_len = cfg.seq_len.saturating_sub(2).max(2);
    let mut opts = CycleOptions::new(a.common.seed);
    opts.k = a.k;
    opts.percentile = a.percentile;
    opts.id_max_length = a
        .id_max_length
        .unwrap_or(cfg.loop_horizon.saturating_sub(2));
    if a.calibration > 0 && a.evaluation > 0 {
        opts.calibration = gen_alternating(a.calibration, (2, max_len), a.common.seed)?;
        opts.evaluation = gen_alternating(a.evaluation, (2, max_len), a.common.seed.wrapping_add(1))?;
    }
    let report = analysis::analyze_cycle(&params, &cfg, &probe, &opts)?;
    write_json(&a.common.out, &report)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let ok = report.max_row_sum_error() <= 1e-9 && report.state_sequence.len() == report.horizon;
    if !ok {
        eprintln!("FAIL: transition matrix is not row-stochastic");
    }
    Ok(ok)
}

pub fn sdi_energy(a: &EnergyArgs) -> Result<bool> {
    let report = InfluenceReport::from_json(
        &fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?,
    )?;
    let difficulty = match &a.difficulty {
        Some(p) => Some(analysis::read_difficulty_csv(File::open(p)?)?),
        None => None,
    };
    let e = analysis::sdi_energy(&report, difficulty.as_ref(), a.bins)?;
    e.write_curves_csv(create(&a.out)?)?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("energy");
    let late = a.out.with_file_name(format!("{stem}_late_mass.csv"));
    e.write_late_mass_csv(create(&late)?)?;
    Ok(true)
}
