use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{ExampleFeatures, FeatureSet, FeatureSpace};
use crate::error::{Error, Result};
use crate::stats::{dot, norm, relative_frobenius};

/// Relative tolerance of the conservation check `tracin = sum_t steps[t]`,
/// measured against `sum_k |eta_k| |g_k(z)| |g_k(z')|`.
pub const CONSERVATION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Sketched,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceTrajectory {
    pub train_id: usize,
    pub test_id: usize,
    pub mode: Mode,
    pub tracin: f64,
    pub steps: Vec<f64>,
}

impl InfluenceTrajectory {
    pub fn step_sum(&self) -> f64 {
        self.steps.iter().sum()
    }
}

/// `values[s][t] = sum_k eta_k <phi_s(z), phi_t(z')>`, row-major
/// `train_horizon x test_horizon`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMatrix {
    pub train_id: usize,
    pub test_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl StepMatrix {
    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.values[(s - 1) * self.cols + (t - 1)]
    }

    /// Column sums: the test-side decomposition.
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|t| (0..self.rows).map(|s| self.values[s * self.cols + t]).sum())
            .collect()
    }

    /// Row sums: the train-side decomposition.
    pub fn row_sums(&self) -> Vec<f64> {
        self.values.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn mode_of(space: &FeatureSpace) -> Mode {
    if space.is_sketched() {
        Mode::Sketched
    } else {
        Mode::Exact
    }
}

fn check_sets(train: &[FeatureSet], test: &[FeatureSet], etas: &[f64]) -> Result<Mode> {
    if train.len() != etas.len() || test.len() != etas.len() {
        return Err(Error::FeatureSpace(format!(
            "{} train sets, {} test sets, {} learning rates",
            train.len(),
            test.len(),
            etas.len()
        )));
    }
    let Some(first) = train.first() else {
        return Err(Error::FeatureSpace("no checkpoints".into()));
    };
    for s in train.iter().chain(test) {
        if s.space != first.space {
            return Err(match (&s.space, &first.space) {
                (
                    FeatureSpace::Sketched { plan_id: a, .. },
                    FeatureSpace::Sketched { plan_id: b, .. },
                ) => Error::PlanMismatch { left: *b, right: *a },
                _ => Error::FeatureSpace(format!("{:?} vs {:?}", first.space, s.space)),
            });
        }
    }
    for (a, b) in train.iter().zip(test) {
        if a.checkpoint_step != b.checkpoint_step {
            return Err(Error::FeatureSpace(format!(
                "train features from checkpoint {} paired with test features from {}",
                a.checkpoint_step, b.checkpoint_step
            )));
        }
    }
    for sets in [train, test] {
        let n = sets[0].examples.len();
        if sets.iter().any(|s| s.examples.len() != n) {
            return Err(Error::FeatureSpace("example count differs across checkpoints".into()));
        }
    }
    Ok(mode_of(&first.space))
}

fn pairs(n_train: usize, n_test: usize) -> Vec<(usize, usize)> {
    (0..n_train)
        .flat_map(|i| (0..n_test).map(move |j| (i, j)))
        .collect()
}

/// `|train| x |test|` TracIn matrix (row-major): `sum_k eta_k <g_k(z), g_k(z')>`.
pub fn tracin(train: &[FeatureSet], test: &[FeatureSet], etas: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_sets(train, test, etas)?;
    let (nr, nc) = (train[0].examples.len(), test[0].examples.len());
    Ok((0..nr)
        .into_par_iter()
        .map(|i| {
            (0..nc)
                .map(|j| {
                    etas.iter()
                        .enumerate()
                        .map(|(k, &eta)| {
                            eta * dot(&train[k].examples[i].total, &test[k].examples[j].total)
                        })
                        .sum()
                })
                .collect()
        })
        .collect())
}

fn enforce(tr: &InfluenceTrajectory, scale: f64) -> Result<()> {
    let sum = tr.step_sum();
    if (tr.tracin - sum).abs() > CONSERVATION_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Conservation {
            train: tr.train_id,
            test: tr.test_id,
            tracin: tr.tracin,
            step_sum: sum,
        });
    }
    Ok(())
}

/// `steps[t] = sum_k eta_k <stepped_k(a), total_k(b)>` over the horizon of
/// the stepped side, with TracIn computed independently from the totals.
fn one_sided(
    stepped: &[&ExampleFeatures],
    fixed: &[&ExampleFeatures],
    etas: &[f64],
) -> (Vec<f64>, f64, f64) {
    let horizon = stepped[0].horizon;
    let mut steps = vec![0.0; horizon];
    let (mut tr, mut scale) = (0.0, 0.0);
    for (k, &eta) in etas.iter().enumerate() {
        let (a, b) = (stepped[k], fixed[k]);
        for (t, s) in steps.iter_mut().enumerate() {
            *s += eta * dot(a.step(t + 1), &b.total);
        }
        tr += eta * dot(&a.total, &b.total);
        scale += eta.abs() * norm(&a.total) * norm(&b.total);
    }
    (steps, tr, scale)
}

/// Test-side SDI: `I_t(z, z') = sum_k eta_k <g_k(z), phi_{k,t}(z')>` for
/// every (train, test) pair, train-major. Fails if any pair violates
/// conservation.
pub fn sdi_test_side(
    train: &[FeatureSet],
    test: &[FeatureSet],
    etas: &[f64],
) -> Result<Vec<InfluenceTrajectory>> {
    let mode = check_sets(train, test, etas)?;
    let (nr, nc) = (train[0].examples.len(), test[0].examples.len());
    pairs(nr, nc)
        .into_par_iter()
        .map(|(i, j)| {
            let zs: Vec<&ExampleFeatures> = train.iter().map(|s| &s.examples[i]).collect();
            let qs: Vec<&ExampleFeatures> = test.iter().map(|s| &s.examples[j]).collect();
            let (steps, tracin, scale) = one_sided(&qs, &zs, etas);
            let tr = InfluenceTrajectory {
                train_id: zs[0].id,
                test_id: qs[0].id,
                mode,
                tracin,
                steps,
            };
            enforce(&tr, scale)?;
            Ok(tr)
        })
        .collect()
}

/// Train-side SDI: `I^_s(z, z') = sum_k eta_k <phi_{k,s}(z), g_k(z')>`.
pub fn sdi_train_side(
    train: &[FeatureSet],
    test: &[FeatureSet],
    etas: &[f64],
) -> Result<Vec<InfluenceTrajectory>> {
    let mode = check_sets(train, test, etas)?;
    let (nr, nc) = (train[0].examples.len(), test[0].examples.len());
    pairs(nr, nc)
        .into_par_iter()
        .map(|(i, j)| {
            let zs: Vec<&ExampleFeatures> = train.iter().map(|s| &s.examples[i]).collect();
            let qs: Vec<&ExampleFeatures> = test.iter().map(|s| &s.examples[j]).collect();
            let (steps, tracin, scale) = one_sided(&zs, &qs, etas);
            let tr = InfluenceTrajectory {
                train_id: zs[0].id,
                test_id: qs[0].id,
                mode,
                tracin,
                steps,
            };
            enforce(&tr, scale)?;
            Ok(tr)
        })
        .collect()
}

/// Step-by-step influence matrices for every pair, train-major.
pub fn sdi_matrix(train: &[FeatureSet], test: &[FeatureSet], etas: &[f64]) -> Result<Vec<StepMatrix>> {
    check_sets(train, test, etas)?;
    let (nr, nc) = (train[0].examples.len(), test[0].examples.len());
    Ok(pairs(nr, nc)
        .into_par_iter()
        .map(|(i, j)| {
            let (rows, cols) = (train[0].examples[i].horizon, test[0].examples[j].horizon);
            let mut values = vec![0.0; rows * cols];
            for (k, &eta) in etas.iter().enumerate() {
                let (a, b) = (&train[k].examples[i], &test[k].examples[j]);
                for s in 0..rows {
                    for t in 0..cols {
                        values[s * cols + t] += eta * dot(a.step(s + 1), b.step(t + 1));
                    }
                }
            }
            StepMatrix {
                train_id: train[0].examples[i].id,
                test_id: test[0].examples[j].id,
                rows,
                cols,
                values,
            }
        })
        .collect())
}

/// Streams checkpoints one at a time so only one checkpoint's features need
/// to be resident.
#[derive(Clone, Debug)]
pub struct SdiAccumulator {
    n_train: usize,
    n_test: usize,
    mode: Option<Mode>,
    space: Option<FeatureSpace>,
    ids: Vec<(usize, usize)>,
    tracin: Vec<f64>,
    scale: Vec<f64>,
    test_side: Vec<Vec<f64>>,
    train_side: Vec<Vec<f64>>,
}

impl SdiAccumulator {
    pub fn new(n_train: usize, n_test: usize) -> Self {
        let n = n_train * n_test;
        Self {
            n_train,
            n_test,
            mode: None,
            space: None,
            ids: Vec::new(),
            tracin: vec![0.0; n],
            scale: vec![0.0; n],
            test_side: vec![Vec::new(); n],
            train_side: vec![Vec::new(); n],
        }
    }

    pub fn add(&mut self, train: &FeatureSet, test: &FeatureSet, eta: f64) -> Result<()> {
        check_sets(std::slice::from_ref(train), std::slice::from_ref(test), &[eta])?;
        if train.examples.len() != self.n_train || test.examples.len() != self.n_test {
            return Err(Error::FeatureSpace("example counts differ from the accumulator".into()));
        }
        if let Some(sp) = &self.space {
            if *sp != train.space {
                return Err(Error::FeatureSpace("checkpoints use different feature spaces".into()));
            }
        }
        self.space = Some(train.space.clone());
        self.mode = Some(mode_of(&train.space));
        let contrib: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = pairs(self.n_train, self.n_test)
            .into_par_iter()
            .map(|(i, j)| {
                let (z, q) = (&train.examples[i], &test.examples[j]);
                let (ts, tr, sc) = one_sided(&[q], &[z], &[eta]);
                let (rs, _, _) = one_sided(&[z], &[q], &[eta]);
                (ts, rs, tr, sc)
            })
            .collect();
        if self.ids.is_empty() {
            self.ids = pairs(self.n_train, self.n_test)
                .into_iter()
                .map(|(i, j)| (train.examples[i].id, test.examples[j].id))
                .collect();
        }
        for (p, (ts, rs, tr, sc)) in contrib.into_iter().enumerate() {
            add_into(&mut self.test_side[p], &ts);
            add_into(&mut self.train_side[p], &rs);
            self.tracin[p] += tr;
            self.scale[p] += sc;
        }
        Ok(())
    }

    fn build(&self, sides: &[Vec<f64>]) -> Result<Vec<InfluenceTrajectory>> {
        let mode = self
            .mode
            .ok_or_else(|| Error::FeatureSpace("no checkpoints accumulated".into()))?;
        sides
            .iter()
            .enumerate()
            .map(|(p, steps)| {
                let tr = InfluenceTrajectory {
                    train_id: self.ids[p].0,
                    test_id: self.ids[p].1,
                    mode,
                    tracin: self.tracin[p],
                    steps: steps.clone(),
                };
                enforce(&tr, self.scale[p])?;
                Ok(tr)
            })
            .collect()
    }

    pub fn test_side(&self) -> Result<Vec<InfluenceTrajectory>> {
        self.build(&self.test_side)
    }

    pub fn train_side(&self) -> Result<Vec<InfluenceTrajectory>> {
        self.build(&self.train_side)
    }
}

fn add_into(acc: &mut Vec<f64>, x: &[f64]) {
    if acc.len() < x.len() {
        acc.resize(x.len(), 0.0);
    }
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub rel_frobenius_sdi: f64,
    pub rel_frobenius_tracin: f64,
}

/// `|A^ - A|_F / |A|_F` for the stacked SDI trajectories and for TracIn.
pub fn fidelity_report(
    exact: &[InfluenceTrajectory],
    sketched: &[InfluenceTrajectory],
) -> Result<FidelityReport> {
    if exact.len() != sketched.len() {
        return Err(Error::FeatureSpace("different pair counts".into()));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (e, s) in exact.iter().zip(sketched) {
        if (e.train_id, e.test_id) != (s.train_id, s.test_id) || e.steps.len() != s.steps.len() {
            return Err(Error::FeatureSpace(format!(
                "pair ({}, {}) does not line up",
                e.train_id, e.test_id
            )));
        }
        a.extend_from_slice(&e.steps);
        b.extend_from_slice(&s.steps);
    }
    let ta: Vec<f64> = exact.iter().map(|t| t.tracin).collect();
    let tb: Vec<f64> = sketched.iter().map(|t| t.tracin).collect();
    Ok(FidelityReport {
        rel_frobenius_sdi: relative_frobenius(&b, &a),
        rel_frobenius_tracin: relative_frobenius(&tb, &ta),
    })
}
