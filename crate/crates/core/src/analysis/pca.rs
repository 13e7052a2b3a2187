//! Leading principal components by power iteration with deflation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

pub const PCA_TOL: f64 = 1e-10;
pub const PCA_MAX_ITER: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// Unit-norm principal axes, each of length `dim`.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance, descending.
    pub explained_variance: Vec<f64>,
    /// Projection of every centred row onto each component.
    pub coords: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub converged: bool,
}

/// Top `k` principal components of the rows of `x` (`n x dim`).
///
/// The covariance is formed explicitly (`dim x dim`); each component is the
/// fixed point of `v <- C v / |C v|`, after which `C <- C - lambda v v^T`.
/// The sign of every axis is fixed so that its largest-magnitude entry is
/// positive.
pub fn pca(x: &[Vec<f64>], k: usize) -> Result<Pca> {
    let n = x.len();
    if n == 0 {
        return Err(config("PCA needs at least one row"));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(config("PCA rows must be non-empty and of equal length"));
    }
    let k = k.min(dim);
    let mut mean = vec![0.0; dim];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = vec![0.0; dim * dim];
    for r in &centred {
        for i in 0..dim {
            let ri = r[i];
            if ri == 0.0 {
                continue;
            }
            let row = &mut cov[i * dim..(i + 1) * dim];
            for (c, rj) in row.iter_mut().zip(r) {
                *c += ri * rj;
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= denom);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0c0a);
    let mut components = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    let mut converged = true;
    for _ in 0..k {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        let mut ok = false;
        for _ in 0..PCA_MAX_ITER {
            let mut w = matvec(&cov, &v, dim);
            let nw = norm(&w);
            if nw <= f64::MIN_POSITIVE {
                // Remaining covariance is zero: any unit vector is an axis.
                lambda = 0.0;
                ok = true;
                break;
            }
            w.iter_mut().for_each(|x| *x /= nw);
            let diff = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v = w;
            lambda = nw;
            if diff < PCA_TOL {
                ok = true;
                break;
            }
        }
        converged &= ok;
        fix_sign(&mut v);
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
        explained.push(lambda);
    }
    let coords = centred
        .iter()
        .map(|r| components.iter().map(|c| dot(r, c)).collect())
        .collect();
    Ok(Pca {
        components,
        explained_variance: explained,
        coords,
        mean,
        converged,
    })
}

fn matvec(a: &[f64], v: &[f64], dim: usize) -> Vec<f64> {
    a.chunks(dim).map(|row| dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

fn fix_sign(v: &mut [f64]) {
    let big = v.iter().fold(0.0f64, |b, &x| if x.abs() > b.abs() { x } else { b });
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
