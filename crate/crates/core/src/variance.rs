//! Closed-form expectation and variance of sketched inner products, used as
//! ground truth for the Monte-Carlo checks.
//!
//! For `X, Y` of shape `d x d'` and the TensorSketch inner product
//! `<T(X), T(Y)>` with `m` buckets:
//!
//! ```text
//! Var = (2/m^2)(P1 - N1) + (1/m)(P2 - N2)
//! P1  = |X^T Y|^2 + |X Y^T|^2 + 2 <X o X, Y o Y>
//! N1  = |diag(X^T Y)|^2 + |diag(X Y^T)|^2 + tr((X X^T) o (Y Y^T)) + tr((X^T X) o (Y^T Y))
//! P2  = P1 + 2 tr((X^T Y)^2) + <X, Y>^2 + |X|^2 |Y|^2
//! N2  = N1 + 2 (|diag(X^T Y)|^2 + |diag(X Y^T)|^2)
//! ```
//!
//! The grouped form of `N2` written with coefficient 3 on the diagonal terms
//! plus the two traces is the same quantity: expanding `N1` gives
//! `N1 + 2 D = 3 D + traces` where `D` is the pair of diagonal norms, so both
//! groupings produce the same `P2 - N2`. Brute-force enumeration over all hash
//! functions on small shapes agrees with this variance; the version with the
//! `1/m^2` and `1/m` coefficients exchanged does not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, shape, Result};
use crate::sketch::{CountSketch, TensorSketch};
use crate::stats::{pairwise_sum, SampleMoments};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceReport {
    pub d_out: usize,
    pub d_in: usize,
    pub m: usize,
    pub expected_dot: f64,
    #[serde(rename = "P1")]
    pub p1: f64,
    #[serde(rename = "N1")]
    pub n1: f64,
    #[serde(rename = "P2")]
    pub p2: f64,
    #[serde(rename = "N2")]
    pub n2: f64,
    pub exact_variance: f64,
    pub bound: f64,
    pub mc_mean: Option<f64>,
    pub mc_variance: Option<f64>,
    pub mc_variance_se: Option<f64>,
    pub mc_trials: usize,
}

impl VarianceReport {
    /// Attaches Monte-Carlo moments of sampled inner products.
    pub fn with_samples(mut self, samples: &[f64]) -> Self {
        let mo = SampleMoments::from_samples(samples);
        self.mc_mean = Some(mo.mean);
        self.mc_variance = Some(mo.variance);
        self.mc_variance_se = Some(mo.se_variance);
        self.mc_trials = mo.n;
        self
    }

    /// Rounding error of `exact_variance`, which cancels `P - N` terms.
    pub fn exact_roundoff(&self) -> f64 {
        let m = self.m as f64;
        let scale = 2.0 / (m * m) * (self.p1.abs() + self.n1.abs()) + (self.p2.abs() + self.n2.abs()) / m;
        16.0 * f64::EPSILON * scale
    }

    /// `(mc_variance - exact_variance) / se`, if samples are attached. The
    /// denominator includes the oracle's own rounding error so that
    /// zero-variance inputs (e.g. `1 x 1`) do not divide noise by noise.
    pub fn variance_z(&self) -> Option<f64> {
        let (v, se) = (self.mc_variance?, self.mc_variance_se?);
        let den = se.hypot(self.exact_roundoff());
        if den == 0.0 {
            return Some(if v == self.exact_variance { 0.0 } else { f64::INFINITY });
        }
        Some((v - self.exact_variance) / den)
    }
}

/// Variance coefficient of the TensorSketch bound, `4/m^2 + 6/m`.
pub fn ts_bound_factor(m: usize) -> f64 {
    let m = m as f64;
    4.0 / (m * m) + 6.0 / m
}

fn check_even(m: usize) -> Result<()> {
    if m == 0 || !m.is_multiple_of(2) {
        return Err(config(format!("sketch dimension {m} must be even and positive")));
    }
    Ok(())
}

/// Row-major `a^T b` for `a, b` of shape `r x c`; result `c x c`.
fn gram_t(a: &[f64], b: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * c];
    for i in 0..r {
        let ar = &a[i * c..(i + 1) * c];
        let br = &b[i * c..(i + 1) * c];
        for (p, &ap) in ar.iter().enumerate() {
            if ap == 0.0 {
                continue;
            }
            let row = &mut out[p * c..(p + 1) * c];
            for (o, &bq) in row.iter_mut().zip(br) {
                *o += ap * bq;
            }
        }
    }
    out
}

/// Row-major `a b^T` for `a, b` of shape `r x c`; result `r x r`.
fn gram(a: &[f64], b: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            out[i * r + j] = pairwise_sum(
                &a[i * c..(i + 1) * c]
                    .iter()
                    .zip(&b[j * c..(j + 1) * c])
                    .map(|(x, y)| x * y)
                    .collect::<Vec<_>>(),
            );
        }
    }
    out
}

fn sum_map(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    pairwise_sum(&(0..n).map(f).collect::<Vec<_>>())
}

/// Exact variance of `<T(X), T(Y)>` for row-major `d x d'` matrices.
pub fn exact_ts_variance(x: &[f64], y: &[f64], d: usize, dp: usize, m: usize) -> Result<VarianceReport> {
    check_even(m)?;
    if x.len() != d * dp || y.len() != d * dp {
        return Err(shape(format!(
            "expected two {d}x{dp} matrices, got {} and {} values",
            x.len(),
            y.len()
        )));
    }
    let xty = gram_t(x, y, d, dp); // d' x d'
    let xyt = gram(x, y, d, dp); // d x d
    let frob = |v: &[f64]| sum_map(v.len(), |i| v[i] * v[i]);
    let diag_sq = |v: &[f64], n: usize| sum_map(n, |i| v[i * n + i] * v[i * n + i]);

    let had = sum_map(d * dp, |i| x[i] * x[i] * y[i] * y[i]);
    let p1 = frob(&xty) + frob(&xyt) + 2.0 * had;

    let diag_xty = diag_sq(&xty, dp);
    let diag_xyt = diag_sq(&xyt, d);
    // tr((X X^T) o (Y Y^T)) = sum_i |x_i|^2 |y_i|^2 over rows.
    let row_sq = |v: &[f64], i: usize| sum_map(dp, |j| v[i * dp + j] * v[i * dp + j]);
    let col_sq = |v: &[f64], j: usize| sum_map(d, |i| v[i * dp + j] * v[i * dp + j]);
    let tr_rows = sum_map(d, |i| row_sq(x, i) * row_sq(y, i));
    let tr_cols = sum_map(dp, |j| col_sq(x, j) * col_sq(y, j));
    let n1 = diag_xty + diag_xyt + tr_rows + tr_cols;

    let tr_sq = sum_map(dp * dp, |k| {
        let (a, b) = (k / dp, k % dp);
        xty[a * dp + b] * xty[b * dp + a]
    });
    let inner = sum_map(d * dp, |i| x[i] * y[i]);
    let nx = frob(x);
    let ny = frob(y);
    let p2 = p1 + 2.0 * tr_sq + inner * inner + nx * ny;
    let n2 = n1 + 2.0 * (diag_xty + diag_xyt);

    let mf = m as f64;
    let exact = (2.0 / (mf * mf)) * (p1 - n1) + (1.0 / mf) * (p2 - n2);
    Ok(VarianceReport {
        d_out: d,
        d_in: dp,
        m,
        expected_dot: inner,
        p1,
        n1,
        p2,
        n2,
        exact_variance: exact,
        bound: ts_bound_factor(m) * nx * ny,
        mc_mean: None,
        mc_variance: None,
        mc_variance_se: None,
        mc_trials: 0,
    })
}

/// Exact variance of `<CS(x), CS(y)>`:
/// `(1/m)(sum_{i!=j} x_i^2 y_j^2 + sum_{i!=j} x_i y_i x_j y_j)`.
pub fn exact_cs_variance(x: &[f64], y: &[f64], m: usize) -> Result<f64> {
    if m == 0 {
        return Err(config("sketch dimension must be positive"));
    }
    if x.len() != y.len() {
        return Err(shape(format!("vector lengths {} and {} differ", x.len(), y.len())));
    }
    let n = x.len();
    let xx = sum_map(n, |i| x[i] * x[i]);
    let yy = sum_map(n, |i| y[i] * y[i]);
    let xy = sum_map(n, |i| x[i] * y[i]);
    let diag = sum_map(n, |i| x[i] * x[i] * y[i] * y[i]);
    Ok(((xx * yy - diag) + (xy * xy - diag)) / m as f64)
}

/// Closed-form exact variance for the witness `X = Y = ones / sqrt(d d')`.
pub fn witness_variance(d: usize, dp: usize, m: usize) -> f64 {
    let (d, dp, m) = (d as f64, dp as f64, m as f64);
    let dd = d * dp;
    (4.0 / (m * m)) * (1.0 + 1.0 / dd - 1.0 / d - 1.0 / dp)
        + (1.0 / m) * (6.0 + 2.0 / dd - 4.0 / d - 4.0 / dp)
}

/// `bound - exact_variance` for the all-ones witness (both have unit norms).
pub fn tightness_gap(d: usize, dp: usize, m: usize) -> f64 {
    ts_bound_factor(m) - witness_variance(d, dp, m)
}

/// The witness matrix `ones(d x d') / sqrt(d d')`, row-major.
pub fn witness_matrix(d: usize, dp: usize) -> Vec<f64> {
    vec![1.0 / ((d * dp) as f64).sqrt(); d * dp]
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// `<T(X), T(Y)>` for `trials` independent TensorSketch draws. Each matrix is
/// sketched through the FFT path as `sum_i e_i (x) X_i`.
pub fn mc_ts_dots(
    x: &[f64],
    y: &[f64],
    d: usize,
    dp: usize,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if x.len() != d * dp || y.len() != d * dp {
        return Err(shape("matrix sizes do not match the stated shape"));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let ts = TensorSketch::sample(d, dp, m, &mut rng)?;
            let mut scratch = crate::sketch::TsScratch::new(m);
            let mut eye = vec![0.0; d * d];
            for i in 0..d {
                eye[i * d + i] = 1.0;
            }
            let mut sx = vec![0.0; m];
            let mut sy = vec![0.0; m];
            ts.accumulate_rows(&eye, x, d, &mut scratch, &mut sx)?;
            ts.accumulate_rows(&eye, y, d, &mut scratch, &mut sy)?;
            Ok(crate::stats::dot(&sx, &sy))
        })
        .collect()
}

/// `<CS(x), CS(y)>` for `trials` independent CountSketch draws.
pub fn mc_cs_dots(x: &[f64], y: &[f64], m: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(shape("vector lengths differ"));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let cs = CountSketch::sample(x.len(), m, &mut rng)?;
            Ok(crate::stats::dot(&cs.apply(x)?, &cs.apply(y)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_input_has_zero_variance_and_finite_z() {
        let r = exact_ts_variance(&[0.7], &[-1.3], 1, 1, 8).unwrap();
        assert!(r.exact_variance.abs() <= r.exact_roundoff());
        let s = mc_ts_dots(&[0.7], &[-1.3], 1, 1, 8, 2000, 3).unwrap();
        let r = r.with_samples(&s);
        assert!(r.variance_z().unwrap().abs() < 1.0);
    }

    #[test]
    fn witness_terms_match_closed_forms() {
        let (d, dp, m) = (3, 5, 8);
        let w = witness_matrix(d, dp);
        let r = exact_ts_variance(&w, &w, d, dp, m).unwrap();
        let dd = (d * dp) as f64;
        assert!((r.p1 - (2.0 + 2.0 / dd)).abs() < 1e-12);
        assert!((r.n1 - (2.0 / 3.0 + 2.0 / 5.0)).abs() < 1e-12);
        assert!((r.p2 - (6.0 + 2.0 / dd)).abs() < 1e-12);
        assert!((r.n2 - (4.0 / 3.0 + 4.0 / 5.0)).abs() < 1e-12);
        assert!((r.exact_variance - witness_variance(d, dp, m)).abs() < 1e-14);
        assert!((r.bound - ts_bound_factor(m)).abs() < 1e-14);
    }

    #[test]
    fn zero_y_gives_zero() {
        let x = [1.0, 2.0, -3.0, 0.5];
        let r = exact_ts_variance(&x, &[0.0; 4], 2, 2, 4).unwrap();
        assert_eq!(r.exact_variance, 0.0);
        assert_eq!(r.bound, 0.0);
    }

    #[test]
    fn scalar_matrices_have_no_variance() {
        assert_eq!(tightness_gap(1, 1, 8), ts_bound_factor(8));
        let r = exact_ts_variance(&[2.0], &[3.0], 1, 1, 4).unwrap();
        assert!(r.exact_variance.abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(exact_ts_variance(&[1.0; 4], &[1.0; 4], 2, 2, 3).is_err());
        assert!(exact_ts_variance(&[1.0; 4], &[1.0; 3], 2, 2, 4).is_err());
        assert!(exact_cs_variance(&[1.0], &[1.0, 2.0], 4).is_err());
    }

    #[test]
    fn cs_basis_cases() {
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        assert!((exact_cs_variance(&e1, &e2, 8).unwrap() - 1.0 / 8.0).abs() < 1e-15);
        assert_eq!(exact_cs_variance(&e1, &e1, 8).unwrap(), 0.0);
    }

    #[test]
    fn report_serializes_with_term_names() {
        let r = exact_ts_variance(&[1.0, 0.0, 0.0, 1.0], &[0.0, 1.0, 1.0, 0.0], 2, 2, 4).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for k in ["P1", "N1", "P2", "N2", "exact_variance", "bound", "mc_trials"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn mc_samples_are_reproducible() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let a = mc_ts_dots(&x, &x, 2, 3, 4, 50, 9).unwrap();
        let b = mc_ts_dots(&x, &x, 2, 3, 4, 50, 9).unwrap();
        assert_eq!(a, b);
    }
}
