//! SDI energy curves: `e(t) = sum_z |SDI(z, q)_t|` per query `q`, summarised
//! per difficulty bin.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::InfluenceReport;
use crate::error::{config, Result};
use crate::stats::quantile;

/// Per-step energy of each query, keyed by test id.
pub fn query_energy(report: &InfluenceReport) -> BTreeMap<usize, Vec<f64>> {
    let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for p in &report.pairs {
        let e = out.entry(p.test_id).or_default();
        if e.len() < p.steps.len() {
            e.resize(p.steps.len(), 0.0);
        }
        for (a, s) in e.iter_mut().zip(&p.steps) {
            *a += s.abs();
        }
    }
    out
}

/// Fraction of energy at steps `t >= ceil(tau/2) + 1`. `None` for zero energy.
pub fn late_mass(energy: &[f64]) -> Option<f64> {
    let tau = energy.len();
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return None;
    }
    let start = tau.div_ceil(2) + 1;
    let late: f64 = energy.iter().skip(start - 1).sum();
    Some(late / total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub step: usize,
    pub queries: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LateMassRow {
    pub test_id: usize,
    pub bin: usize,
    pub late_mass: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub curves: Vec<EnergyRow>,
    pub late_mass: Vec<LateMassRow>,
}

/// Equal-width histogram over `difficulty` (test id -> value). Without a
/// difficulty column every query falls in a single bin.
pub fn sdi_energy(
    report: &InfluenceReport,
    difficulty: Option<&BTreeMap<usize, f64>>,
    bins: usize,
) -> Result<EnergyReport> {
    if bins == 0 {
        return Err(config("bins must be positive"));
    }
    let energy = query_energy(report);
    let diff = |q: usize| -> Result<f64> {
        match difficulty {
            None => Ok(0.0),
            Some(d) => d
                .get(&q)
                .copied()
                .ok_or_else(|| config(format!("no difficulty for test id {q}"))),
        }
    };
    let values: Vec<f64> = energy.keys().map(|&q| diff(q)).collect::<Result<_>>()?;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 0.0 };
    let bin_of = |v: f64| -> usize {
        if width == 0.0 {
            0
        } else {
            (((v - lo) / width) as usize).min(bins - 1)
        }
    };
    let used_bins = if width == 0.0 { 1 } else { bins };

    let mut members: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); used_bins];
    let mut late = Vec::new();
    for ((&q, e), &v) in energy.iter().zip(&values) {
        let b = bin_of(v);
        members[b].push(e);
        late.push(LateMassRow {
            test_id: q,
            bin: b,
            late_mass: late_mass(e),
        });
    }
    let mut curves = Vec::new();
    for (b, qs) in members.iter().enumerate() {
        let tau = qs.iter().map(|e| e.len()).max().unwrap_or(0);
        let (blo, bhi) = if width == 0.0 {
            (lo.min(hi), hi.max(lo))
        } else {
            (lo + b as f64 * width, lo + (b + 1) as f64 * width)
        };
        for t in 0..tau {
            let xs: Vec<f64> = qs.iter().filter_map(|e| e.get(t).copied()).collect();
            curves.push(EnergyRow {
                bin: b,
                lo: blo,
                hi: bhi,
                step: t + 1,
                queries: xs.len(),
                median: quantile(&xs, 0.5),
                q25: quantile(&xs, 0.25),
                q75: quantile(&xs, 0.75),
            });
        }
    }
    Ok(EnergyReport { curves, late_mass: late })
}

impl EnergyReport {
    pub fn write_curves_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.curves {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_late_mass_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.late_mass {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a `test_id,difficulty` CSV with a header row.
pub fn read_difficulty_csv(r: impl std::io::Read) -> Result<BTreeMap<usize, f64>> {
    #[derive(Deserialize)]
    struct Row {
        test_id: usize,
        difficulty: f64,
    }
    let mut rd = csv::Reader::from_reader(r);
    let mut out = BTreeMap::new();
    for row in rd.deserialize() {
        let row: Row = row?;
        out.insert(row.test_id, row.difficulty);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{PairRecord, SCHEMA_VERSION};

    fn report(pairs: Vec<(usize, usize, Vec<f64>)>) -> InfluenceReport {
        InfluenceReport {
            schema_version: SCHEMA_VERSION,
            pairs: pairs
                .into_iter()
                .map(|(a, b, s)| PairRecord {
                    train_id: a,
                    test_id: b,
                    tracin: s.iter().sum(),
                    steps: s,
                })
                .collect(),
        }
    }

    #[test]
    fn zero_sdi_gives_zero_curves() {
        let r = report(vec![(0, 0, vec![0.0; 4]), (1, 0, vec![0.0; 4])]);
        let e = sdi_energy(&r, None, 3).unwrap();
        assert_eq!(e.curves.len(), 4);
        assert!(e.curves.iter().all(|c| c.median == 0.0 && c.q75 == 0.0));
        assert_eq!(e.late_mass[0].late_mass, None);
    }

    #[test]
    fn single_pair_energy_is_abs_steps() {
        let r = report(vec![(0, 0, vec![1.0, -2.0, 0.5])]);
        assert_eq!(query_energy(&r)[&0], vec![1.0, 2.0, 0.5]);
    }

    #[test]
    fn late_mass_on_last_step_is_one() {
        assert_eq!(late_mass(&[0.0, 0.0, 0.0, 0.0, 3.0]), Some(1.0));
        assert_eq!(late_mass(&[1.0, 1.0, 1.0, 1.0]), Some(0.5));
    }

    #[test]
    fn difficulty_histogram() {
        let r = report(vec![(0, 0, vec![1.0]), (0, 1, vec![2.0]), (0, 2, vec![4.0])]);
        let d: BTreeMap<usize, f64> = [(0, 0.0), (1, 0.4), (2, 1.0)].into_iter().collect();
        let e = sdi_energy(&r, Some(&d), 2).unwrap();
        assert_eq!(e.curves.len(), 2);
        assert_eq!(e.curves[0].queries, 2);
        assert_eq!(e.curves[0].median, 1.5);
        assert_eq!(e.curves[1].median, 4.0);
        assert!(sdi_energy(&r, Some(&BTreeMap::new()), 2).is_err());
    }
}
