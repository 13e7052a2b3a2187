//! Feature cache: `SDIF` header (`m`, `tau`, `n_tensors`, `n_examples` as
//! little-endian u32) followed by row-major f64 `[example][step][feature]`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::features::{ExampleFeatures, FeatureSet, FeatureSpace};
use crate::error::{Error, Result};
use crate::sketch::SketchPlan;

const MAGIC: &[u8; 4] = b"SDIF";

fn u32_of(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))
}

pub fn write_feature_cache(path: &Path, set: &FeatureSet, plan: &SketchPlan) -> Result<()> {
    match set.space {
        FeatureSpace::Sketched { plan_id, .. } if plan_id == plan.id() => {}
        FeatureSpace::Sketched { plan_id, .. } => {
            return Err(Error::PlanMismatch {
                left: plan_id,
                right: plan.id(),
            })
        }
        FeatureSpace::Exact { .. } => {
            return Err(Error::FeatureSpace("only sketched features are cached".into()))
        }
    }
    let tau = set.examples.first().map_or(0, |e| e.horizon);
    if set.examples.iter().any(|e| e.horizon != tau) {
        return Err(Error::FeatureSpace("cached examples must share one horizon".into()));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [plan.sketch_dim(), tau, plan.num_tensors(), set.examples.len()] {
        w.write_all(&u32_of(v)?.to_le_bytes())?;
    }
    for e in &set.examples {
        for v in &e.steps {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a cache written under `plan`. Totals are rebuilt as the sum of the
/// step features, which is exact for sketched features up to rounding.
pub fn read_feature_cache(
    path: &Path,
    plan: &SketchPlan,
    checkpoint_step: u64,
    eta: f64,
) -> Result<FeatureSet> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let mut hdr = [0usize; 4];
    for h in &mut hdr {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *h = u32::from_le_bytes(b) as usize;
    }
    let [m, tau, n_tensors, n_examples] = hdr;
    if m != plan.sketch_dim() || n_tensors != plan.num_tensors() {
        return Err(Error::Format(format!(
            "cache has m={m}, {n_tensors} tensors; plan has m={}, {} tensors",
            plan.sketch_dim(),
            plan.num_tensors()
        )));
    }
    let dim = m * n_tensors;
    let mut buf = [0u8; 8];
    let mut examples = Vec::with_capacity(n_examples);
    for id in 0..n_examples {
        let mut steps = Vec::with_capacity(tau * dim);
        for _ in 0..tau * dim {
            r.read_exact(&mut buf)?;
            steps.push(f64::from_le_bytes(buf));
        }
        let mut total = vec![0.0; dim];
        for row in steps.chunks(dim) {
            for (t, v) in total.iter_mut().zip(row) {
                *t += v;
            }
        }
        examples.push(ExampleFeatures {
            id,
            horizon: tau,
            dim,
            total,
            steps,
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(FeatureSet {
        space: FeatureSpace::Sketched {
            plan_id: plan.id(),
            m,
        },
        checkpoint_step,
        eta,
        examples,
    })
}
