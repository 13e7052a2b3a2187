use std::io::Write;

use serde::{Deserialize, Serialize};

use super::influence::InfluenceTrajectory;
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub train_id: usize,
    pub test_id: usize,
    pub tracin: f64,
    pub steps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub schema_version: u32,
    pub pairs: Vec<PairRecord>,
}

impl InfluenceReport {
    /// Pairs sorted by `(train_id, test_id)`.
    pub fn from_trajectories(trs: &[InfluenceTrajectory]) -> Self {
        let mut pairs: Vec<PairRecord> = trs
            .iter()
            .map(|t| PairRecord {
                train_id: t.train_id,
                test_id: t.test_id,
                tracin: t.tracin,
                steps: t.steps.clone(),
            })
            .collect();
        pairs.sort_by_key(|p| (p.train_id, p.test_id));
        Self {
            schema_version: SCHEMA_VERSION,
            pairs,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Long-format CSV: `train_id,test_id,tracin,step,sdi`, steps 1-indexed.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["train_id", "test_id", "tracin", "step", "sdi"])?;
        for p in &self.pairs {
            for (t, v) in p.steps.iter().enumerate() {
                out.write_record([
                    p.train_id.to_string(),
                    p.test_id.to_string(),
                    p.tracin.to_string(),
                    (t + 1).to_string(),
                    v.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
