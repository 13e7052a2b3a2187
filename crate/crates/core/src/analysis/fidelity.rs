//! Sketched-vs-exact SDI error as a function of the sketch dimension.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{
    featurize_checkpoint, fidelity_report, FeatureMode, InfluenceTrajectory, SdiAccumulator,
    DEFAULT_EXACT_BUDGET,
};
use crate::error::{config, Result};
use crate::model::{body_shapes, train_sgd, Checkpoint, Example, ModelConfig, Parameters, TrainOptions};
use crate::parity::{gen_parity, Curriculum, VOCAB_SIZE};
use crate::sketch::SketchPlan;
use crate::stats::{log_log_slope, mean, std_dev};

/// A model, its checkpoints and the train/test examples influence is computed on.
#[derive(Clone, Debug)]
pub struct FidelitySetup {
    pub cfg: ModelConfig,
    pub checkpoints: Vec<Checkpoint>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub horizon: usize,
}

impl FidelitySetup {
    /// Briefly trained parity model with `d_model = d`, `tau = 8`, `L <= 10`,
    /// two checkpoints, `n_train x n_test` pairs.
    pub fn parity(d: usize, heads: usize, n_train: usize, n_test: usize, seed: u64) -> Result<Self> {
        let horizon = 8;
        let mut cfg = ModelConfig::micro(VOCAB_SIZE, d, heads, horizon + 2, horizon);
        cfg.seed = seed;
        let mut params = Parameters::init(&cfg)?;
        let mut cur = Curriculum::new(vec![(20, 6)], 8, seed ^ 0x9e37)?;
        let opts = TrainOptions {
            steps: 20,
            checkpoint_every: 10,
            checkpoint_initial: false,
            clip_norm: Some(1.0),
        };
        let checkpoints = train_sgd(&mut params, &cfg, &mut cur, &|_| 0.1, &opts, None)?;
        let ex = |count, s| -> Result<Vec<Example>> {
            Ok(gen_parity(count, (2, horizon), s)?
                .iter()
                .map(|p| p.to_example())
                .collect())
        };
        Ok(Self {
            cfg,
            checkpoints,
            train: ex(n_train, seed.wrapping_add(1))?,
            test: ex(n_test, seed.wrapping_add(2))?,
            horizon,
        })
    }

    fn sdi(&self, mode: &FeatureMode<'_>) -> Result<Vec<InfluenceTrajectory>> {
        let mut acc = SdiAccumulator::new(self.train.len(), self.test.len());
        for ck in &self.checkpoints {
            let tr = featurize_checkpoint(ck, &self.cfg, &self.train, mode, self.horizon)?;
            let te = featurize_checkpoint(ck, &self.cfg, &self.test, mode, self.horizon)?;
            acc.add(&tr, &te, ck.eta)?;
        }
        acc.test_side()
    }

    pub fn exact_sdi(&self) -> Result<Vec<InfluenceTrajectory>> {
        self.sdi(&FeatureMode::Exact {
            budget: DEFAULT_EXACT_BUDGET,
        })
    }

    pub fn sketched_sdi(&self, plan: &SketchPlan) -> Result<Vec<InfluenceTrajectory>> {
        self.sdi(&FeatureMode::Sketched(plan))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub m: usize,
    pub mean_err_sdi: f64,
    pub sd_err_sdi: f64,
    pub mean_err_tracin: f64,
    pub sd_err_tracin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityBench {
    pub seeds: usize,
    pub rows: Vec<FidelityRow>,
    /// Log-log slope of mean SDI error against `m`; absent for a single `m`.
    pub slope_sdi: Option<f64>,
    pub slope_tracin: Option<f64>,
}

/// Plan seed for repetition `r` at sketch dimension `m`.
pub fn plan_seed(base: u64, m: usize, r: usize) -> u64 {
    base ^ ((m as u64) << 32) ^ (r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn bench_fidelity(setup: &FidelitySetup, m_list: &[usize], seeds: usize, seed: u64) -> Result<FidelityBench> {
    if m_list.is_empty() || seeds == 0 {
        return Err(config("need at least one m and one seed"));
    }
    let exact = setup.exact_sdi()?;
    let shapes = body_shapes(&setup.cfg);
    let mut rows = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let mut e_sdi = Vec::with_capacity(seeds);
        let mut e_tr = Vec::with_capacity(seeds);
        for r in 0..seeds {
            let plan = SketchPlan::new(plan_seed(seed, m, r), m, &shapes)?;
            let f = fidelity_report(&exact, &setup.sketched_sdi(&plan)?)?;
            e_sdi.push(f.rel_frobenius_sdi);
            e_tr.push(f.rel_frobenius_tracin);
        }
        rows.push(FidelityRow {
            m,
            mean_err_sdi: mean(&e_sdi),
            sd_err_sdi: std_dev(&e_sdi),
            mean_err_tracin: mean(&e_tr),
            sd_err_tracin: std_dev(&e_tr),
        });
    }
    let ms: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
    let sdi: Vec<f64> = rows.iter().map(|r| r.mean_err_sdi).collect();
    let tr: Vec<f64> = rows.iter().map(|r| r.mean_err_tracin).collect();
    Ok(FidelityBench {
        seeds,
        slope_sdi: log_log_slope(&ms, &sdi),
        slope_tracin: log_log_slope(&ms, &tr),
        rows,
    })
}

impl FidelityBench {
    /// `m,mean_err_sdi,sd,mean_err_tracin,sd,slope`; the slope column holds the
    /// SDI slope on every row and is empty when it is undefined.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["m", "mean_err_sdi", "sd", "mean_err_tracin", "sd", "slope"])?;
        let slope = self.slope_sdi.map(|s| s.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.m.to_string(),
                r.mean_err_sdi.to_string(),
                r.sd_err_sdi.to_string(),
                r.mean_err_tracin.to_string(),
                r.sd_err_tracin.to_string(),
                slope.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
