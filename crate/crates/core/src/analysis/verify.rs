//! Self-contained statistical verification of the sketches and the variance
//! oracles, reported as JSON.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::sketch::{global_sketch, CountSketch, HashFamily, SketchPlan, TensorSketch};
use crate::stats::{dot, SampleMoments};
use crate::tensor::{NamedTensors, Tensor};
use crate::variance::{
    exact_cs_variance, exact_ts_variance, mc_cs_dots, mc_ts_dots, ts_bound_factor, witness_variance,
};

pub const VERIFY_SCHEMA_VERSION: u32 = 1;

/// Deliberate defects used to check that the suite notices them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMutation {
    /// Sign bit mapped to `b` instead of `2b - 1`, i.e. `{0, 1}` instead of `{-1, +1}`.
    OffByOne,
}

#[derive(Clone, Debug)]
pub struct VerifyConfig {
    pub trials: usize,
    pub m_list: Vec<usize>,
    pub seed: u64,
    pub mutation: Option<SignMutation>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 20_000,
            m_list: vec![8, 16, 32, 64],
            seed: 0,
            mutation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub statistic: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub m: usize,
    pub kind: String,
    pub shape: Vec<usize>,
    pub exact: f64,
    pub empirical: f64,
    pub empirical_se: f64,
    pub bound: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub seed: u64,
    pub trials: usize,
    pub m_list: Vec<usize>,
    pub mutation: Option<SignMutation>,
    pub checks: Vec<CheckResult>,
    pub variance_by_m: Vec<VarianceRow>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

const MEAN_Z: f64 = 4.0;
const VAR_Z: f64 = 5.0;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn trial_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(t as u64);
    r
}

/// CountSketch draw with the optional sign defect applied.
fn sample_cs(d: usize, m: usize, rng: &mut ChaCha8Rng, mutation: Option<SignMutation>) -> Result<CountSketch> {
    let h = HashFamily::bucket(d, m, rng)?;
    let s = HashFamily::sign(d, rng)?;
    let signs = match mutation {
        None => s.sign_table(),
        Some(SignMutation::OffByOne) => (0..d).map(|i| (s.field_value(i) & 1) as f64).collect(),
    };
    CountSketch::from_tables(h.bucket_table(), signs, m)
}

fn check(name: &str, passed: bool, statistic: Option<f64>, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        statistic,
        detail,
    }
}

fn hash_ranges(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bad = 0usize;
    for &m in &cfg.m_list {
        for _ in 0..100 {
            let h = HashFamily::bucket(64, m, &mut rng)?;
            let s = HashFamily::sign(64, &mut rng)?;
            bad += h.bucket_table().iter().filter(|&&b| b as usize >= m).count();
            bad += s.sign_table().iter().filter(|&&v| v != 1.0 && v != -1.0).count();
        }
    }
    Ok(check("hash_ranges", bad == 0, Some(bad as f64), format!("{bad} out-of-range hash values")))
}

fn fft_vs_definition(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 1);
    let mut worst = 0.0f64;
    for &m in &cfg.m_list {
        for _ in 0..20 {
            let (a, b) = (rng.random_range(1..=8), rng.random_range(1..=8));
            let ts = TensorSketch::sample(a, b, m, &mut rng)?;
            let u = gaussian(&mut rng, a);
            let v = gaussian(&mut rng, b);
            let fast = ts.pair(&u, &v)?;
            let mut slow = vec![0.0; m];
            for i in 0..a {
                for j in 0..b {
                    slow[ts.bucket(i, j)] += ts.sign(i, j) * u[i] * v[j];
                }
            }
            for (x, y) in fast.iter().zip(&slow) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok(check(
        "fft_matches_definition",
        worst <= 1e-10,
        Some(worst),
        format!("max abs deviation {worst:.3e}"),
    ))
}

fn cs_unbiased(cfg: &VerifyConfig) -> Result<CheckResult> {
    let (d, m) = (64, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 2);
    let x = gaussian(&mut rng, d);
    let y = gaussian(&mut rng, d);
    let dots: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let cs = sample_cs(d, m, &mut trial_rng(cfg.seed ^ 3, t), cfg.mutation)?;
            Ok(dot(&cs.apply(&x)?, &cs.apply(&y)?))
        })
        .collect::<Result<_>>()?;
    let mo = SampleMoments::from_samples(&dots);
    let z = mo.mean_z(dot(&x, &y));
    Ok(check(
        "count_sketch_unbiased",
        z.abs() <= MEAN_Z,
        Some(z),
        format!("mean {:.6} vs {:.6} (z = {z:.2})", mo.mean, dot(&x, &y)),
    ))
}

fn global_unbiased(cfg: &VerifyConfig) -> Result<CheckResult> {
    let m = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 4);
    let mut g = NamedTensors::new();
    g.push("b", Tensor::vector(gaussian(&mut rng, 8)));
    g.push("w", Tensor::from_vec(&[4, 3], gaussian(&mut rng, 12))?);
    let mut p = g.zeros_like();
    p.at_mut(0).data = gaussian(&mut rng, 8);
    p.at_mut(1).data = gaussian(&mut rng, 12);
    let truth = g.dot(&p)?;
    let mutation = cfg.mutation;
    let dots: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let seed = cfg.seed.wrapping_add(t as u64);
            match mutation {
                None => {
                    let plan = SketchPlan::for_tensors(seed, m, &g)?;
                    global_sketch(&g, &plan)?.dot(&global_sketch(&p, &plan)?)
                }
                Some(_) => {
                    let mut r = trial_rng(seed, t);
                    let cs = sample_cs(8, m, &mut r, mutation)?;
                    let ts = TensorSketch::new(sample_cs(4, m, &mut r, mutation)?, sample_cs(3, m, &mut r, mutation)?)?;
                    let a = dot(&cs.apply(&g.at(0).data)?, &cs.apply(&p.at(0).data)?);
                    let b = dot(&ts.apply_dense(&g.at(1).data, 4, 3)?, &ts.apply_dense(&p.at(1).data, 4, 3)?);
                    Ok(a + b)
                }
            }
        })
        .collect::<Result<_>>()?;
    let mo = SampleMoments::from_samples(&dots);
    let z = mo.mean_z(truth);
    Ok(check(
        "global_sketch_unbiased",
        z.abs() <= MEAN_Z,
        Some(z),
        format!("mean {:.6} vs {truth:.6} (z = {z:.2})", mo.mean),
    ))
}

fn variance_rows(cfg: &VerifyConfig, rows: &mut Vec<VarianceRow>) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 5);
    let (d, dp) = (3, 4);
    let x = gaussian(&mut rng, d * dp);
    let y = gaussian(&mut rng, d * dp);
    let u = gaussian(&mut rng, 32);
    let v = gaussian(&mut rng, 32);
    let mut fails = Vec::new();
    for &m in &cfg.m_list {
        let r = exact_ts_variance(&x, &y, d, dp, m)?
            .with_samples(&mc_ts_dots(&x, &y, d, dp, m, cfg.trials, cfg.seed ^ (m as u64))?);
        let (emp, se) = (r.mc_variance.unwrap_or(0.0), r.mc_variance_se.unwrap_or(0.0));
        let z = r.variance_z().unwrap_or(f64::INFINITY);
        if z.abs() > VAR_Z || emp > r.bound + VAR_Z * se {
            fails.push(format!("ts m={m}"));
        }
        rows.push(VarianceRow {
            m,
            kind: "tensor_sketch".into(),
            shape: vec![d, dp],
            exact: r.exact_variance,
            empirical: emp,
            empirical_se: se,
            bound: r.bound,
            z,
        });

        let exact = exact_cs_variance(&u, &v, m)?;
        let bound = 2.0 / m as f64 * dot(&u, &u) * dot(&v, &v);
        let mo = SampleMoments::from_samples(&mc_cs_dots(&u, &v, m, cfg.trials, cfg.seed ^ (m as u64) ^ 7)?);
        let z = mo.variance_z(exact);
        if z.abs() > VAR_Z || mo.variance > bound + VAR_Z * mo.se_variance {
            fails.push(format!("cs m={m}"));
        }
        rows.push(VarianceRow {
            m,
            kind: "count_sketch".into(),
            shape: vec![32],
            exact,
            empirical: mo.variance,
            empirical_se: mo.se_variance,
            bound,
            z,
        });
    }
    Ok(check(
        "variance_matches_exact",
        fails.is_empty(),
        None,
        if fails.is_empty() {
            "all within 5 standard errors and under the bound".into()
        } else {
            format!("failed: {}", fails.join(", "))
        },
    ))
}

fn closed_form_bounds(cfg: &VerifyConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 6);
    let mut worst = f64::NEG_INFINITY;
    let mut negative = false;
    for _ in 0..100 {
        let (a, b) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let m = 2 * rng.random_range(1..=32);
        let x = gaussian(&mut rng, a * b);
        let y = gaussian(&mut rng, a * b);
        let r = exact_ts_variance(&x, &y, a, b, m)?;
        negative |= r.exact_variance < -1e-12 * r.bound;
        worst = worst.max(r.exact_variance / r.bound);
    }
    Ok(check(
        "exact_variance_within_bound",
        !negative && worst <= 1.0 + 1e-12,
        Some(worst),
        format!("max variance/bound ratio {worst:.4}"),
    ))
}

fn tighter_than_prior(cfg: &VerifyConfig) -> CheckResult {
    let bad: Vec<usize> = cfg
        .m_list
        .iter()
        .copied()
        .filter(|&m| ts_bound_factor(m) >= 8.0 / m as f64)
        .collect();
    check(
        "bound_below_eight_over_m",
        bad.is_empty(),
        None,
        if bad.is_empty() {
            "4/m^2 + 6/m < 8/m for every m".into()
        } else {
            format!("not strictly below 8/m at m = {bad:?}")
        },
    )
}

fn witness() -> CheckResult {
    let ratio = witness_variance(1024, 1024, 2048) / ts_bound_factor(2048);
    check(
        "tightness_witness",
        ratio >= 0.99,
        Some(ratio),
        format!("all-ones witness reaches {:.4}% of the bound", 100.0 * ratio),
    )
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.trials < 2 {
        return Err(config("need at least two trials"));
    }
    if cfg.m_list.is_empty() {
        return Err(config("m list is empty"));
    }
    for &m in &cfg.m_list {
        if m < 2 || !m.is_power_of_two() {
            return Err(config(format!("m = {m} is not a power of two >= 2")));
        }
    }
    let mut rows = Vec::new();
    let checks = vec![
        hash_ranges(cfg)?,
        fft_vs_definition(cfg)?,
        cs_unbiased(cfg)?,
        global_unbiased(cfg)?,
        variance_rows(cfg, &mut rows)?,
        closed_form_bounds(cfg)?,
        tighter_than_prior(cfg),
        witness(),
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        schema_version: VERIFY_SCHEMA_VERSION,
        seed: cfg.seed,
        trials: cfg.trials,
        m_list: cfg.m_list.clone(),
        mutation: cfg.mutation,
        checks,
        variance_by_m: rows,
        passed,
    })
}
