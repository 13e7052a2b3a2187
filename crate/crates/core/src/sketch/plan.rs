use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::count_sketch::CountSketch;
use super::tensor_sketch::TensorSketch;
use crate::error::{config, shape, Error, Result};
use crate::tensor::NamedTensors;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    /// Rank-1 parameter, sketched with CountSketch.
    Vector,
    /// Rank-2 parameter, sketched with TensorSketch.
    Matrix,
}

#[derive(Clone, Debug)]
pub enum TensorMap {
    Vector(CountSketch),
    Matrix(TensorSketch),
}

#[derive(Clone, Debug)]
pub struct PlannedTensor {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub subseed: u64,
    pub map: TensorMap,
}

/// Frozen family of per-tensor sketch maps. Output blocks of size `m` are
/// concatenated in plan order.
#[derive(Clone, Debug)]
pub struct SketchPlan {
    seed: u64,
    m: usize,
    tensors: Vec<PlannedTensor>,
    id: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub subseed: u64,
    pub shape: Vec<usize>,
}

/// Serialized form: `{seed, m, tensors: [{name, kind, subseed, shape}]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub seed: u64,
    pub m: usize,
    pub tensors: Vec<PlanTensorEntry>,
}

fn build_map(kind: TensorKind, shape: &[usize], m: usize, subseed: u64) -> Result<TensorMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(subseed);
    Ok(match kind {
        TensorKind::Vector => TensorMap::Vector(CountSketch::sample(shape[0], m, &mut rng)?),
        TensorKind::Matrix => {
            TensorMap::Matrix(TensorSketch::sample(shape[0], shape[1], m, &mut rng)?)
        }
    })
}

fn kind_of(name: &str, shape: &[usize]) -> Result<TensorKind> {
    match shape {
        [d] if *d > 0 => Ok(TensorKind::Vector),
        [r, c] if *r > 0 && *c > 0 => Ok(TensorKind::Matrix),
        _ => Err(config(format!("tensor {name} has unsupported shape {shape:?}"))),
    }
}

impl SketchPlan {
    /// Builds a plan over `layout` (name, shape) pairs. Rank-1 tensors get a
    /// CountSketch, rank-2 tensors a TensorSketch.
    pub fn new<S: AsRef<str>>(seed: u64, m: usize, layout: &[(S, Vec<usize>)]) -> Result<Self> {
        validate_m(m)?;
        if layout.is_empty() {
            return Err(config("sketch plan needs at least one tensor"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let name = name.as_ref();
            let kind = kind_of(name, shape)?;
            let mut subseed = rng.next_u64();
            while entries.iter().any(|e: &PlanTensorEntry| e.subseed == subseed) {
                subseed = rng.next_u64();
            }
            entries.push(PlanTensorEntry {
                name: name.to_string(),
                kind,
                subseed,
                shape: shape.clone(),
            });
        }
        Self::from_document(&PlanDocument {
            seed,
            m,
            tensors: entries,
        })
    }

    /// Plan covering every tensor of `grads`, in collection order.
    pub fn for_tensors(seed: u64, m: usize, grads: &NamedTensors) -> Result<Self> {
        let layout: Vec<(String, Vec<usize>)> = grads
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape.clone()))
            .collect();
        Self::new(seed, m, &layout)
    }

    pub fn from_document(doc: &PlanDocument) -> Result<Self> {
        validate_m(doc.m)?;
        if doc.tensors.is_empty() {
            return Err(config("sketch plan needs at least one tensor"));
        }
        let mut tensors = Vec::with_capacity(doc.tensors.len());
        for (i, e) in doc.tensors.iter().enumerate() {
            if doc.tensors[..i].iter().any(|o| o.name == e.name) {
                return Err(config(format!("tensor {} listed twice", e.name)));
            }
            let kind = kind_of(&e.name, &e.shape)?;
            if kind != e.kind {
                return Err(config(format!(
                    "tensor {} declared {:?} but has shape {:?}",
                    e.name, e.kind, e.shape
                )));
            }
            tensors.push(PlannedTensor {
                name: e.name.clone(),
                kind,
                shape: e.shape.clone(),
                subseed: e.subseed,
                map: build_map(kind, &e.shape, doc.m, e.subseed)?,
            });
        }
        let mut hasher = DefaultHasher::new();
        doc.seed.hash(&mut hasher);
        doc.m.hash(&mut hasher);
        for e in &doc.tensors {
            e.name.hash(&mut hasher);
            e.shape.hash(&mut hasher);
            e.subseed.hash(&mut hasher);
        }
        Ok(Self {
            seed: doc.seed,
            m: doc.m,
            tensors,
            id: hasher.finish(),
        })
    }

    pub fn to_document(&self) -> PlanDocument {
        PlanDocument {
            seed: self.seed,
            m: self.m,
            tensors: self
                .tensors
                .iter()
                .map(|t| PlanTensorEntry {
                    name: t.name.clone(),
                    kind: t.kind,
                    subseed: t.subseed,
                    shape: t.shape.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sketch_dim(&self) -> usize {
        self.m
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn tensors(&self) -> &[PlannedTensor] {
        &self.tensors
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    /// `(alpha + beta) * m`.
    pub fn feature_dim(&self) -> usize {
        self.tensors.len() * self.m
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn block(&self, index: usize) -> Range<usize> {
        index * self.m..(index + 1) * self.m
    }

    pub fn zeros(&self) -> SketchedVector {
        SketchedVector {
            values: vec![0.0; self.feature_dim()],
            plan_id: self.id,
        }
    }

    pub fn wrap(&self, values: Vec<f64>) -> Result<SketchedVector> {
        if values.len() != self.feature_dim() {
            return Err(shape(format!(
                "{} values for a {}-dimensional sketch",
                values.len(),
                self.feature_dim()
            )));
        }
        Ok(SketchedVector {
            values,
            plan_id: self.id,
        })
    }
}

fn validate_m(m: usize) -> Result<()> {
    if m < 2 || !m.is_power_of_two() {
        return Err(config(format!(
            "sketch dimension {m} must be an even power of two"
        )));
    }
    Ok(())
}

/// A vector in the image of one particular [`SketchPlan`].
#[derive(Clone, Debug, PartialEq)]
pub struct SketchedVector {
    pub values: Vec<f64>,
    pub plan_id: u64,
}

impl SketchedVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &SketchedVector) -> Result<f64> {
        if self.plan_id != other.plan_id {
            return Err(Error::PlanMismatch {
                left: self.plan_id,
                right: other.plan_id,
            });
        }
        Ok(crate::stats::dot(&self.values, &other.values))
    }
}

/// Sketches a full named gradient collection: per tensor CountSketch or
/// TensorSketch (dense operator), concatenated in plan order.
pub fn global_sketch(grads: &NamedTensors, plan: &SketchPlan) -> Result<SketchedVector> {
    if grads.len() != plan.num_tensors() {
        let extra: Vec<&str> = grads.names().filter(|n| plan.index_of(n).is_none()).collect();
        return Err(config(format!(
            "gradient has {} tensors, plan has {} (unplanned: {extra:?})",
            grads.len(),
            plan.num_tensors()
        )));
    }
    let mut out = plan.zeros();
    for (idx, t) in plan.tensors.iter().enumerate() {
        let g = grads
            .get(&t.name)
            .ok_or_else(|| config(format!("gradient is missing tensor {}", t.name)))?;
        if g.shape != t.shape {
            return Err(config(format!(
                "tensor {} has shape {:?}, plan expects {:?}",
                t.name, g.shape, t.shape
            )));
        }
        let block = &mut out.values[plan.block(idx)];
        match &t.map {
            TensorMap::Vector(cs) => cs.accumulate(&g.data, block)?,
            TensorMap::Matrix(ts) => {
                let s = ts.apply_dense(&g.data, t.shape[0], t.shape[1])?;
                block.copy_from_slice(&s);
            }
        }
    }
    Ok(out)
}
