//! Mechanistic readouts of a probe's loop trajectory: lag cosines, PCA,
//! k-means state sequence, transition graph and a state-to-parity proxy.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KMeans, DEFAULT_RESTARTS};
use super::pca::pca;
use crate::error::{config, Result};
use crate::model::{forward, readout_logits, ModelConfig, Parameters};
use crate::parity::{ParityExample, EQUALS};
use crate::stats::quantile;

pub const CYCLE_SCHEMA_VERSION: u32 = 1;
pub const MAX_LAG: usize = 8;

#[derive(Clone, Debug)]
pub struct CycleOptions {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Percentile (0-100) of calibration distances used as the on-manifold
    /// threshold for selective proxy accuracy.
    pub percentile: f64,
    pub calibration: Vec<ParityExample>,
    pub evaluation: Vec<ParityExample>,
    /// Evaluation examples up to this length form the in-distribution split.
    pub id_max_length: usize,
}

impl CycleOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            k: 4,
            restarts: DEFAULT_RESTARTS,
            seed,
            percentile: 95.0,
            calibration: Vec::new(),
            evaluation: Vec::new(),
            id_max_length: usize::MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagCosine {
    pub lag: usize,
    /// `cos(h_t, h_{t+lag})` for `t = 1..tau-lag`.
    pub values: Vec<f64>,
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyReport {
    /// Parity predicted for each state; `None` for states never hit during calibration.
    pub lookup: Vec<Option<u8>>,
    pub calibration_size: usize,
    pub calibration_accuracy: f64,
    pub evaluation_size: usize,
    pub accuracy: f64,
    pub in_distribution_accuracy: Option<f64>,
    pub out_of_distribution_accuracy: Option<f64>,
    pub percentile: f64,
    pub threshold: f64,
    pub selective_accuracy: Option<f64>,
    pub selective_coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub schema_version: u32,
    pub probe: String,
    pub label: u8,
    pub readout_step: usize,
    pub horizon: usize,
    pub k: usize,
    pub degenerate: bool,
    pub warnings: Vec<String>,
    /// Margin of the true class over the other parity class, read out from
    /// every iteration.
    pub logit_margin: Vec<f64>,
    pub cosine_lag_table: Vec<LagCosine>,
    pub pca_coords: Vec<[f64; 2]>,
    pub explained_variance: Vec<f64>,
    pub state_sequence: Vec<usize>,
    pub transition_matrix: Vec<Vec<f64>>,
    pub centroids: Vec<Vec<f64>>,
    pub proxy_accuracy: Option<f64>,
    pub proxy: Option<ProxyReport>,
}

impl CycleReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Largest deviation of a transition row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.transition_matrix
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Answer-position hidden states `h_1..h_tau` of a parity example over its
/// full horizon.
pub fn answer_trajectory(p: &Parameters, cfg: &ModelConfig, ex: &ParityExample) -> Result<Vec<Vec<f64>>> {
    let trace = forward(p, cfg, &ex.to_example())?;
    let j = ex.answer_position();
    Ok(trace.hidden[1..].iter().map(|h| h.row(j).to_vec()).collect())
}

/// `logit[label] - logit[1 - label]` at the answer position, per iteration.
pub fn logit_margins(p: &Parameters, cfg: &ModelConfig, ex: &ParityExample) -> Result<Vec<f64>> {
    let trace = forward(p, cfg, &ex.to_example())?;
    let j = ex.answer_position();
    let y = ex.label as usize;
    Ok(trace.hidden[1..]
        .iter()
        .map(|h| {
            let row = Array2::from_shape_vec((1, h.ncols()), h.row(j).to_vec()).expect("one row");
            let logits = readout_logits(p, &row);
            logits[[0, y]] - logits[[0, 1 - y]]
        })
        .collect())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        ab / (na * nb)
    }
}

pub fn lag_cosines(traj: &[Vec<f64>], max_lag: usize) -> Vec<LagCosine> {
    (1..=max_lag)
        .map(|lag| {
            let values: Vec<f64> = (0..traj.len().saturating_sub(lag))
                .map(|t| cosine(&traj[t], &traj[t + lag]))
                .collect();
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
            LagCosine { lag, values, mean }
        })
        .collect()
}

/// Row-normalized empirical transition counts. A state with no outgoing
/// transition (only possible for the final state) gets a self-loop.
pub fn transition_matrix(states: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; k]; k];
    for w in states.windows(2) {
        counts[w[0]][w[1]] += 1.0;
    }
    for (i, row) in counts.iter_mut().enumerate() {
        let s: f64 = row.iter().sum();
        if s == 0.0 {
            row[i] = 1.0;
        } else {
            row.iter_mut().for_each(|c| *c /= s);
        }
    }
    counts
}

/// Trajectory-only part of the analysis, usable on synthetic hidden states.
pub struct TrajectoryAnalysis {
    pub cosine_lag_table: Vec<LagCosine>,
    pub pca_coords: Vec<[f64; 2]>,
    pub explained_variance: Vec<f64>,
    pub clusters: KMeans,
    pub transition_matrix: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

pub fn analyze_trajectory(traj: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<TrajectoryAnalysis> {
    if traj.is_empty() {
        return Err(config("empty trajectory"));
    }
    let mut warnings = Vec::new();
    let p = pca(traj, 2)?;
    if !p.converged {
        warnings.push("power iteration did not reach tolerance".to_string());
    }
    let pca_coords = p
        .coords
        .iter()
        .map(|c| [c.first().copied().unwrap_or(0.0), c.get(1).copied().unwrap_or(0.0)])
        .collect();
    let clusters = kmeans(traj, k, restarts, seed)?;
    if clusters.degenerate {
        warnings.push(format!(
            "requested k = {k} but only {} distinct states were observed",
            clusters.k
        ));
    }
    let transition_matrix = transition_matrix(&clusters.labels, clusters.k);
    Ok(TrajectoryAnalysis {
        cosine_lag_table: lag_cosines(traj, MAX_LAG),
        pca_coords,
        explained_variance: p.explained_variance,
        clusters,
        transition_matrix,
        warnings,
    })
}

/// Readout-step answer state of each example, assigned to its nearest centroid.
fn readout_states(
    p: &Parameters,
    cfg: &ModelConfig,
    km: &KMeans,
    examples: &[ParityExample],
) -> Result<Vec<(usize, f64)>> {
    use rayon::prelude::*;
    examples
        .par_iter()
        .map(|ex| {
            let trace = forward(p, cfg, &ex.to_example())?;
            let h = trace.hidden[ex.readout_step].row(ex.answer_position()).to_vec();
            Ok(km.assign(&h))
        })
        .collect()
}

fn accuracy<'a>(hits: impl Iterator<Item = &'a bool>) -> Option<f64> {
    let (mut n, mut c) = (0usize, 0usize);
    for &h in hits {
        n += 1;
        c += usize::from(h);
    }
    (n > 0).then(|| c as f64 / n as f64)
}

/// Learns a majority state-to-parity table on `calibration` and scores it on
/// `evaluation`.
pub fn fit_proxy(
    p: &Parameters,
    cfg: &ModelConfig,
    km: &KMeans,
    calibration: &[ParityExample],
    evaluation: &[ParityExample],
    percentile: f64,
    id_max_length: usize,
) -> Result<ProxyReport> {
    if calibration.is_empty() || evaluation.is_empty() {
        return Err(config("proxy needs calibration and evaluation examples"));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(config(format!("percentile {percentile} outside [0, 100]")));
    }
    let cal = readout_states(p, cfg, km, calibration)?;
    let mut votes = vec![[0usize; 2]; km.k];
    for ((s, _), ex) in cal.iter().zip(calibration) {
        votes[*s][ex.label as usize] += 1;
    }
    let lookup: Vec<Option<u8>> = votes
        .iter()
        .map(|v| match v[0] + v[1] {
            0 => None,
            _ => Some(u8::from(v[1] > v[0])),
        })
        .collect();
    let predict = |s: usize| lookup[s];
    let cal_hits: Vec<bool> = cal
        .iter()
        .zip(calibration)
        .map(|((s, _), ex)| predict(*s) == Some(ex.label))
        .collect();
    let dists: Vec<f64> = cal.iter().map(|c| c.1).collect();
    let threshold = quantile(&dists, percentile / 100.0);

    let ev = readout_states(p, cfg, km, evaluation)?;
    let hits: Vec<bool> = ev
        .iter()
        .zip(evaluation)
        .map(|((s, _), ex)| predict(*s) == Some(ex.label))
        .collect();
    let split = |id: bool| {
        accuracy(
            hits.iter()
                .zip(evaluation)
                .filter(|(_, ex)| (ex.n() <= id_max_length) == id)
                .map(|(h, _)| h),
        )
    };
    let on: Vec<bool> = ev
        .iter()
        .zip(&hits)
        .filter(|((_, d), _)| *d <= threshold)
        .map(|(_, &h)| h)
        .collect();
    Ok(ProxyReport {
        lookup,
        calibration_size: calibration.len(),
        calibration_accuracy: accuracy(cal_hits.iter()).unwrap_or(0.0),
        evaluation_size: evaluation.len(),
        accuracy: accuracy(hits.iter()).unwrap_or(0.0),
        in_distribution_accuracy: split(true),
        out_of_distribution_accuracy: split(false),
        percentile,
        threshold,
        selective_accuracy: accuracy(on.iter()),
        selective_coverage: on.len() as f64 / evaluation.len() as f64,
    })
}

/// Full cycle analysis of `probe`. The proxy is skipped when no calibration
/// or evaluation examples are supplied.
pub fn analyze_cycle(
    p: &Parameters,
    cfg: &ModelConfig,
    probe: &ParityExample,
    opts: &CycleOptions,
) -> Result<CycleReport> {
    if probe.tokens[probe.answer_position()] != EQUALS {
        return Err(config("probe has no '=' token at its answer position"));
    }
    let traj = answer_trajectory(p, cfg, probe)?;
    let a = analyze_trajectory(&traj, opts.k, opts.restarts, opts.seed)?;
    let proxy = if opts.calibration.is_empty() || opts.evaluation.is_empty() {
        None
    } else {
        Some(fit_proxy(
            p,
            cfg,
            &a.clusters,
            &opts.calibration,
            &opts.evaluation,
            opts.percentile,
            opts.id_max_length,
        )?)
    };
    Ok(CycleReport {
        schema_version: CYCLE_SCHEMA_VERSION,
        probe: probe.bit_string(),
        label: probe.label,
        readout_step: probe.readout_step,
        horizon: traj.len(),
        k: a.clusters.k,
        degenerate: a.clusters.degenerate,
        warnings: a.warnings,
        logit_margin: logit_margins(p, cfg, probe)?,
        cosine_lag_table: a.cosine_lag_table,
        pca_coords: a.pca_coords,
        explained_variance: a.explained_variance,
        state_sequence: a.clusters.labels.clone(),
        transition_matrix: a.transition_matrix,
        centroids: a.clusters.centroids.clone(),
        proxy_accuracy: proxy.as_ref().map(|p| p.accuracy),
        proxy,
    })
}
