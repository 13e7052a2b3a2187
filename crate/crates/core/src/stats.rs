//! Small numeric helpers shared by the oracles and analysis harnesses.

/// Pairwise (cascade) summation; error grows as O(log n) instead of O(n).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - mu) * (x - mu)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Summary of a Monte-Carlo sample: mean, sample variance and the standard
/// errors of both.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean.
    pub se_mean: f64,
    /// Standard error of the sample variance, `sqrt((mu4 - s^4) / n)`.
    pub se_variance: f64,
}

impl SampleMoments {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n < 2 {
            return Self {
                n,
                mean: mean(xs),
                ..Self::default()
            };
        }
        let mu = mean(xs);
        let var = variance(xs);
        let c4: Vec<f64> = xs.iter().map(|x| (x - mu).powi(4)).collect();
        let mu4 = pairwise_sum(&c4) / n as f64;
        let se_var = ((mu4 - var * var).max(0.0) / n as f64).sqrt();
        Self {
            n,
            mean: mu,
            variance: var,
            se_mean: (var / n as f64).sqrt(),
            se_variance: se_var,
        }
    }

    /// `|mean - target|` measured in standard errors of the mean.
    pub fn mean_z(&self, target: f64) -> f64 {
        z_score(self.mean - target, self.se_mean)
    }

    /// `|variance - target|` measured in standard errors of the variance.
    pub fn variance_z(&self, target: f64) -> f64 {
        z_score(self.variance - target, self.se_variance)
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Least-squares slope of `ln y` against `ln x`. `None` for fewer than two points.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Linear-interpolated quantile of an unsorted sample, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `||a - b||_F / ||b||_F` over flattened values.
pub fn relative_frobenius(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((log_log_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn quantiles() {
        let xs = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 0.25), 2.0);
        assert_eq!(quantile(&xs, 1.0), 5.0);
    }

    #[test]
    fn moments_of_constant_sample() {
        let m = SampleMoments::from_samples(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.mean_z(2.0), 0.0);
    }
}
