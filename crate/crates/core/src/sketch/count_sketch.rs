use rand::Rng;

use super::hash::HashFamily;
use crate::error::{config, Result};

/// `CS(x)_j = sum_{i : h(i) = j} s(i) x_i` with the hashes tabulated over the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSketch {
    m: usize,
    buckets: Vec<u32>,
    signs: Vec<f64>,
}

impl CountSketch {
    pub fn from_hashes(bucket: &HashFamily, sign: &HashFamily) -> Result<Self> {
        if bucket.domain_size != sign.domain_size {
            return Err(config(format!(
                "bucket domain {} != sign domain {}",
                bucket.domain_size, sign.domain_size
            )));
        }
        Self::from_tables(bucket.bucket_table(), sign.sign_table(), bucket.range as usize)
    }

    /// Fresh `(h, s)` draw for a `d`-dimensional domain.
    pub fn sample<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Result<Self> {
        let h = HashFamily::bucket(d, m, rng)?;
        let s = HashFamily::sign(d, rng)?;
        Self::from_hashes(&h, &s)
    }

    /// Explicit tables. Signs are used as given, so callers can build
    /// deliberately broken sketches when testing the statistical checks.
    pub fn from_tables(buckets: Vec<u32>, signs: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(config("sketch dimension must be positive"));
        }
        if buckets.len() != signs.len() {
            return Err(config("bucket and sign tables differ in length"));
        }
        if let Some(b) = buckets.iter().find(|&&b| b as usize >= m) {
            return Err(config(format!("bucket {b} outside [0, {m})")));
        }
        Ok(Self { m, buckets, signs })
    }

    pub fn sketch_dim(&self) -> usize {
        self.m
    }

    pub fn domain_size(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, i: usize) -> usize {
        self.buckets[i] as usize
    }

    pub fn sign(&self, i: usize) -> f64 {
        self.signs[i]
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n > self.buckets.len() {
            return Err(config(format!(
                "input length {n} exceeds hash domain {}",
                self.buckets.len()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.m];
        self.accumulate(x, &mut out)?;
        Ok(out)
    }

    /// `out += CS(x)`.
    pub fn accumulate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        debug_assert_eq!(out.len(), self.m);
        for ((&xi, &b), &s) in x.iter().zip(&self.buckets).zip(&self.signs) {
            out[b as usize] += s * xi;
        }
        Ok(())
    }
}

/// CountSketch of `x` evaluating the hash polynomials directly.
pub fn count_sketch(x: &[f64], h: &HashFamily, s: &HashFamily, m: usize) -> Result<Vec<f64>> {
    if x.len() > h.domain_size || x.len() > s.domain_size {
        return Err(config(format!(
            "input length {} exceeds hash domain {}",
            x.len(),
            h.domain_size.min(s.domain_size)
        )));
    }
    if h.range != m as u64 {
        return Err(config(format!("bucket hash range {} != m = {m}", h.range)));
    }
    let mut out = vec![0.0; m];
    for (i, &xi) in x.iter().enumerate() {
        out[h.eval(i) as usize] += s.sign_at(i) * xi;
    }
    Ok(out)
}
