//! Parity training presets and the end-to-end training driver.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::model::{evaluate, train_sgd, Checkpoint, ModelConfig, Parameters, TrainLog, TrainOptions};
use crate::parity::{gen_parity, gen_parity_fixed, Curriculum, ParityExample, VOCAB_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Micro,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Preset::Micro),
            "full" => Ok(Preset::Full),
            _ => Err(config(format!("unknown preset {s:?} (expected micro or full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityPreset {
    pub model: ModelConfig,
    /// `(steps, max_length)` per curriculum phase.
    pub phases: Vec<(usize, usize)>,
    pub batch_size: usize,
    pub lr: f64,
    /// The rate decays linearly from `lr` to `lr_end` over the last
    /// `decay_steps` updates.
    pub lr_end: f64,
    pub decay_steps: usize,
    pub clip_norm: Option<f64>,
    pub checkpoint_every: usize,
    pub curriculum_seed: u64,
    /// Longest length evaluated out of distribution.
    pub ood_length: usize,
}

impl ParityPreset {
    /// `d_model = 64`, 4 heads, curriculum 2 -> 12, OOD length 20.
    pub fn micro() -> Self {
        let max_len = 12;
        let ood = 20;
        let mut model = ModelConfig::micro(VOCAB_SIZE, 64, 4, ood + 2, max_len + 2);
        model.seed = 1;
        let mut phases: Vec<(usize, usize)> = (2..=max_len).map(|m| (300, m)).collect();
        phases.push((600, max_len));
        Self {
            model,
            phases,
            batch_size: 32,
            lr: 0.3,
            lr_end: 0.03,
            decay_steps: 900,
            clip_norm: Some(1.0),
            checkpoint_every: 500,
            curriculum_seed: 7,
            ood_length: ood,
        }
    }

    /// Width 256, 64 heads, curriculum up to length 20, OOD length 40. No
    /// accuracy or runtime guarantees on CPU.
    pub fn full() -> Self {
        let max_len = 20;
        let ood = 40;
        let mut model = ModelConfig::micro(VOCAB_SIZE, 256, 64, ood + 2, max_len + 2);
        model.seed = 1;
        let phases: Vec<(usize, usize)> = (2..=max_len).map(|m| (500, m)).collect();
        Self {
            model,
            phases,
            batch_size: 64,
            lr: 0.1,
            lr_end: 0.01,
            decay_steps: 2000,
            clip_norm: Some(1.0),
            checkpoint_every: 1000,
            curriculum_seed: 7,
            ood_length: ood,
        }
    }

    pub fn of(preset: Preset) -> Self {
        match preset {
            Preset::Micro => Self::micro(),
            Preset::Full => Self::full(),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.0).sum()
    }

    pub fn max_length(&self) -> usize {
        self.phases.iter().map(|p| p.1).max().unwrap_or(2)
    }

    pub fn learning_rate(&self, step: usize) -> f64 {
        let total = self.total_steps();
        let start = total.saturating_sub(self.decay_steps);
        if step < start || self.decay_steps == 0 {
            self.lr
        } else {
            let f = ((step - start) as f64 / self.decay_steps as f64).min(1.0);
            self.lr + (self.lr_end - self.lr) * f
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthAccuracy {
    pub length: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParitySummary {
    pub steps: usize,
    pub final_loss: f64,
    /// Accuracy on a fresh sample from the training distribution.
    pub train_accuracy: f64,
    pub per_length: Vec<LengthAccuracy>,
    pub ood_per_length: Vec<LengthAccuracy>,
}

pub struct ParityRun {
    pub params: Parameters,
    pub checkpoints: Vec<Checkpoint>,
    pub summary: ParitySummary,
}

const EVAL_COUNT: usize = 1000;
const PER_LENGTH: usize = 200;

fn accuracy_of(p: &Parameters, cfg: &ModelConfig, exs: &[ParityExample]) -> Result<f64> {
    let exs: Vec<_> = exs.iter().map(ParityExample::to_example).collect();
    evaluate(p, cfg, &exs)
}

/// Trains from scratch with the preset's curriculum. Checkpoints are taken
/// every `checkpoint_every` updates and after the last one.
pub fn train_parity(preset: &ParityPreset, mut log: Option<&mut dyn FnMut(&TrainLog)>) -> Result<ParityRun> {
    let cfg = &preset.model;
    let mut params = Parameters::init(cfg)?;
    let mut cur = Curriculum::new(preset.phases.clone(), preset.batch_size, preset.curriculum_seed)?;
    let steps = preset.total_steps();
    let opts = TrainOptions {
        steps,
        checkpoint_every: preset.checkpoint_every,
        checkpoint_initial: false,
        clip_norm: preset.clip_norm,
    };
    let mut final_loss = f64::NAN;
    let mut cb = |l: &TrainLog| {
        final_loss = l.loss;
        if let Some(f) = log.as_mut() {
            f(l);
        }
    };
    let schedule = |s: usize| preset.learning_rate(s);
    let mut checkpoints = train_sgd(&mut params, cfg, &mut cur, &schedule, &opts, Some(&mut cb))?;
    if checkpoints.last().is_none_or(|c| c.step as usize != steps) {
        checkpoints.push(Checkpoint {
            step: steps as u64,
            eta: preset.learning_rate(steps.saturating_sub(1)),
            params: params.tensors.clone(),
        });
    }

    let max_len = preset.max_length();
    let seed = preset.curriculum_seed ^ 0xacc;
    let train_accuracy = accuracy_of(&params, cfg, &gen_parity(EVAL_COUNT, (2, max_len), seed)?)?;
    let per = |lo: usize, hi: usize| -> Result<Vec<LengthAccuracy>> {
        (lo..=hi)
            .map(|n| {
                Ok(LengthAccuracy {
                    length: n,
                    accuracy: accuracy_of(&params, cfg, &gen_parity_fixed(PER_LENGTH, n, seed + n as u64)?)?,
                })
            })
            .collect()
    };
    let per_length = per(2, max_len)?;
    let ood_per_length = per(max_len + 1, preset.ood_length.min(cfg.seq_len - 2))?;
    Ok(ParityRun {
        summary: ParitySummary {
            steps,
            final_loss,
            train_accuracy,
            per_length,
            ood_per_length,
        },
        params,
        checkpoints,
    })
}
