use rayon::prelude::*;

use super::backward::gradient;
use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::forward::{forward, Example};
use super::params::Parameters;
use crate::error::{Error, Result};

/// Supplies the mini-batch for each optimisation step.
pub trait BatchSource {
    fn next_batch(&mut self, step: usize) -> Vec<Example>;
}

impl<F: FnMut(usize) -> Vec<Example>> BatchSource for F {
    fn next_batch(&mut self, step: usize) -> Vec<Example> {
        self(step)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub steps: usize,
    /// Save a checkpoint after every `checkpoint_every` updates (0 = never).
    pub checkpoint_every: usize,
    /// Also save the initial parameters as checkpoint 0.
    pub checkpoint_initial: bool,
    /// Rescale the batch gradient to at most this norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            checkpoint_every: 0,
            checkpoint_initial: false,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLog {
    pub step: usize,
    pub loss: f64,
    pub eta: f64,
    pub grad_norm: f64,
}

/// Plain mini-batch SGD: `w <- w - eta_s * mean_batch grad`. Per-example
/// gradients may be computed in parallel; they are summed in batch order, so
/// results do not depend on the thread count.
pub fn train_sgd(
    params: &mut Parameters,
    cfg: &ModelConfig,
    source: &mut dyn BatchSource,
    schedule: &dyn Fn(usize) -> f64,
    opts: &TrainOptions,
    mut log: Option<&mut dyn FnMut(&TrainLog)>,
) -> Result<Vec<Checkpoint>> {
    cfg.validate()?;
    let mut checkpoints = Vec::new();
    if opts.checkpoint_initial {
        checkpoints.push(Checkpoint {
            step: 0,
            eta: schedule(0),
            params: params.tensors.clone(),
        });
    }
    for step in 0..opts.steps {
        let batch = source.next_batch(step);
        if batch.is_empty() {
            return Err(Error::Input(format!("empty batch at step {step}")));
        }
        let p: &Parameters = params;
        let grads = batch
            .par_iter()
            .map(|ex| gradient(p, cfg, ex))
            .collect::<Result<Vec<_>>>()?;
        let mut total = grads[0].grads.zeros_like();
        let mut loss = 0.0;
        for g in &grads {
            total.axpy(1.0, &g.grads)?;
            loss += g.loss;
        }
        let n = batch.len() as f64;
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let mut scale = 1.0 / n;
        let norm = total.norm_sq().sqrt() * scale;
        if let Some(c) = opts.clip_norm {
            if norm > c {
                scale *= c / norm;
            }
        }
        let eta = schedule(step);
        params.tensors.axpy(-eta * scale, &total)?;
        if let Some(l) = log.as_mut() {
            l(&TrainLog {
                step,
                loss,
                eta,
                grad_norm: norm,
            });
        }
        if opts.checkpoint_every > 0 && (step + 1) % opts.checkpoint_every == 0 {
            checkpoints.push(Checkpoint {
                step: (step + 1) as u64,
                eta,
                params: params.tensors.clone(),
            });
        }
    }
    Ok(checkpoints)
}

/// Fraction of examples whose every masked position is predicted correctly.
pub fn evaluate(params: &Parameters, cfg: &ModelConfig, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let correct = examples
        .par_iter()
        .map(|ex| forward(params, cfg, ex).map(|t| usize::from(t.is_correct())))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / examples.len() as f64)
}
