use rayon::prelude::*;

use crate::error::{config, Error, Result};
use crate::model::{
    backward_into, backward_with_hooks, body_shapes, forward, materialize_step_gradients,
    Checkpoint, Example, FactorBlock, FactorSink, ModelConfig, Parameters, BODY_TENSORS,
};
use crate::sketch::{SketchPlan, TensorMap, TsScratch};

/// Default cap on body parameters for exact (materialized) features.
pub const DEFAULT_EXACT_BUDGET: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureSpace {
    /// Flattened body gradients.
    Exact { dim: usize },
    Sketched { plan_id: u64, m: usize },
}

impl FeatureSpace {
    pub fn is_sketched(&self) -> bool {
        matches!(self, FeatureSpace::Sketched { .. })
    }
}

/// Features of one example at one checkpoint: the total `g` and the per-step
/// `phi_1..phi_tau`, row-major `horizon x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleFeatures {
    pub id: usize,
    pub horizon: usize,
    pub dim: usize,
    pub total: Vec<f64>,
    pub steps: Vec<f64>,
}

impl ExampleFeatures {
    pub fn step(&self, t: usize) -> &[f64] {
        &self.steps[(t - 1) * self.dim..t * self.dim]
    }

    /// `max_i |total_i - sum_t steps[t]_i|`.
    pub fn conservation_gap(&self) -> f64 {
        let mut sum = vec![0.0; self.dim];
        for t in 1..=self.horizon {
            for (s, v) in sum.iter_mut().zip(self.step(t)) {
                *s += v;
            }
        }
        sum.iter()
            .zip(&self.total)
            .fold(0.0f64, |a, (s, g)| a.max((s - g).abs()))
    }
}

/// Features of a set of examples at one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub space: FeatureSpace,
    pub checkpoint_step: u64,
    pub eta: f64,
    pub examples: Vec<ExampleFeatures>,
}

#[derive(Clone, Debug)]
pub enum FeatureMode<'a> {
    Exact { budget: usize },
    Sketched(&'a SketchPlan),
}

/// Streaming sink: sketches every factor block into the step row it belongs
/// to, and separately into the running total.
pub struct SketchFeaturizer<'p> {
    plan: &'p SketchPlan,
    horizon: usize,
    /// Plan block index for each body tensor.
    slots: Vec<usize>,
    steps: Vec<f64>,
    total: Vec<f64>,
    scratch: TsScratch,
}

/// Checks that `plan` covers exactly the body tensors of `cfg`; returns the
/// plan block of each body tensor.
pub fn body_plan_slots(plan: &SketchPlan, cfg: &ModelConfig) -> Result<Vec<usize>> {
    let shapes = body_shapes(cfg);
    if plan.num_tensors() != shapes.len() {
        return Err(config(format!(
            "plan covers {} tensors, the loop body has {}",
            plan.num_tensors(),
            shapes.len()
        )));
    }
    shapes
        .iter()
        .map(|(name, shape)| {
            let i = plan
                .index_of(name)
                .ok_or_else(|| config(format!("plan is missing body tensor {name}")))?;
            if &plan.tensors()[i].shape != shape {
                return Err(config(format!(
                    "plan shape {:?} for {name}, model has {shape:?}",
                    plan.tensors()[i].shape
                )));
            }
            Ok(i)
        })
        .collect()
}

impl<'p> SketchFeaturizer<'p> {
    pub fn new(plan: &'p SketchPlan, cfg: &ModelConfig, horizon: usize) -> Result<Self> {
        let slots = body_plan_slots(plan, cfg)?;
        let f = plan.feature_dim();
        Ok(Self {
            plan,
            horizon,
            slots,
            steps: vec![0.0; horizon * f],
            total: vec![0.0; f],
            scratch: TsScratch::new(plan.sketch_dim()),
        })
    }

    /// Zeroes the accumulators for the next example.
    pub fn reset(&mut self) {
        self.steps.iter_mut().for_each(|v| *v = 0.0);
        self.total.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Bytes of per-example state held by the featurizer.
    pub fn live_bytes(&self) -> usize {
        (self.steps.len() + self.total.len()) * std::mem::size_of::<f64>() + self.scratch.byte_size()
    }

    pub fn take(&mut self, id: usize) -> ExampleFeatures {
        let f = self.plan.feature_dim();
        ExampleFeatures {
            id,
            horizon: self.horizon,
            dim: f,
            total: std::mem::replace(&mut self.total, vec![0.0; f]),
            steps: std::mem::replace(&mut self.steps, vec![0.0; self.horizon * f]),
        }
    }

    fn sketch_into(&mut self, b: &FactorBlock<'_>, row_offset: Option<usize>) -> Result<()> {
        let slot = self.slots[b.tensor];
        let range = self.plan.block(slot);
        let out = match row_offset {
            Some(off) => &mut self.steps[off + range.start..off + range.end],
            None => &mut self.total[range],
        };
        match (&self.plan.tensors()[slot].map, b.acts) {
            (TensorMap::Matrix(ts), Some(acts)) => {
                ts.accumulate_rows(b.deltas, acts, b.rows, &mut self.scratch, out)
            }
            (TensorMap::Vector(cs), None) => {
                let d = b.d_out();
                for r in 0..b.rows {
                    cs.accumulate(&b.deltas[r * d..(r + 1) * d], out)?;
                }
                Ok(())
            }
            _ => Err(config(format!(
                "factor kind for {} does not match the plan",
                BODY_TENSORS[b.tensor]
            ))),
        }
    }
}

impl FactorSink for SketchFeaturizer<'_> {
    fn emit(&mut self, b: &FactorBlock<'_>) -> Result<()> {
        if b.step == 0 || b.step > self.horizon {
            return Err(config(format!("step {} outside [1, {}]", b.step, self.horizon)));
        }
        let off = (b.step - 1) * self.plan.feature_dim();
        self.sketch_into(b, Some(off))?;
        self.sketch_into(b, None)
    }
}

fn with_horizon(ex: &Example, horizon: usize) -> Result<Example> {
    if ex.readout_step > horizon {
        return Err(Error::Input(format!(
            "readout step {} beyond analysis horizon {horizon}",
            ex.readout_step
        )));
    }
    let mut e = ex.clone();
    e.loop_horizon = Some(horizon);
    Ok(e)
}

/// Sketched per-step features, computed while backpropagating (no
/// per-example gradient is materialized).
pub fn featurize_sketched(
    params: &Parameters,
    cfg: &ModelConfig,
    examples: &[Example],
    plan: &SketchPlan,
    horizon: usize,
) -> Result<Vec<ExampleFeatures>> {
    body_plan_slots(plan, cfg)?;
    examples
        .par_iter()
        .enumerate()
        .map(|(id, ex)| {
            let ex = with_horizon(ex, horizon)?;
            let trace = forward(params, cfg, &ex)?;
            let mut fz = SketchFeaturizer::new(plan, cfg, horizon)?;
            backward_into(&trace, params, cfg, &mut fz)?;
            Ok(fz.take(id))
        })
        .collect()
}

/// Exact features: flattened materialized `phi_t`, and the body gradient of
/// the backward pass as the total.
pub fn featurize_exact(
    params: &Parameters,
    cfg: &ModelConfig,
    examples: &[Example],
    horizon: usize,
    budget: usize,
) -> Result<Vec<ExampleFeatures>> {
    let n = params.num_body_params();
    if n > budget {
        return Err(Error::Budget { params: n, budget });
    }
    examples
        .par_iter()
        .enumerate()
        .map(|(id, ex)| {
            let ex = with_horizon(ex, horizon)?;
            let trace = forward(params, cfg, &ex)?;
            let (g, factors) = backward_with_hooks(&trace, params, cfg)?;
            let mut steps = Vec::with_capacity(horizon * n);
            for phi in materialize_step_gradients(&factors) {
                steps.extend(phi.flatten());
            }
            Ok(ExampleFeatures {
                id,
                horizon,
                dim: n,
                total: g.body().flatten(),
                steps,
            })
        })
        .collect()
}

pub fn featurize_checkpoint(
    ck: &Checkpoint,
    cfg: &ModelConfig,
    examples: &[Example],
    mode: &FeatureMode<'_>,
    horizon: usize,
) -> Result<FeatureSet> {
    let params = Parameters::from_tensors(cfg, ck.params.clone())?;
    let (space, examples) = match mode {
        FeatureMode::Exact { budget } => {
            let ex = featurize_exact(&params, cfg, examples, horizon, *budget)?;
            (
                FeatureSpace::Exact {
                    dim: params.num_body_params(),
                },
                ex,
            )
        }
        FeatureMode::Sketched(plan) => (
            FeatureSpace::Sketched {
                plan_id: plan.id(),
                m: plan.sketch_dim(),
            },
            featurize_sketched(&params, cfg, examples, plan, horizon)?,
        ),
    };
    Ok(FeatureSet {
        space,
        checkpoint_step: ck.step,
        eta: ck.eta,
        examples,
    })
}
