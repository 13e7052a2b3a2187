use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sdikit::stats::SampleMoments;
use sdikit::variance::{
    exact_cs_variance, exact_ts_variance, mc_cs_dots, mc_ts_dots, tightness_gap, ts_bound_factor,
    witness_matrix, witness_variance,
};

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Every function `[n] -> [k]`, as tables.
fn all_functions(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|f| {
                (0..k).map(move |v| {
                    let mut g = f.clone();
                    g.push(v);
                    g
                })
            })
            .collect();
    }
    out
}

/// Variance of `<T(X), T(Y)>` over fully random `h1, h2, s1, s2`, by
/// enumeration. Only pairwise bucket and 4-wise sign moments enter, so this
/// equals the variance under the polynomial families.
fn enumerated_variance(x: &[f64], y: &[f64], d: usize, dp: usize, m: usize) -> (f64, f64) {
    let h1s = all_functions(d, m);
    let h2s = all_functions(dp, m);
    let s1s = all_functions(d, 2);
    let s2s = all_functions(dp, 2);
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
    for h1 in &h1s {
        for h2 in &h2s {
            for s1 in &s1s {
                for sg2 in &s2s {
                    let mut tx = vec![0.0; m];
                    let mut ty = vec![0.0; m];
                    for i in 0..d {
                        for j in 0..dp {
                            let sign = (1.0 - 2.0 * s1[i] as f64) * (1.0 - 2.0 * sg2[j] as f64);
                            let b = (h1[i] + h2[j]) % m;
                            tx[b] += sign * x[i * dp + j];
                            ty[b] += sign * y[i * dp + j];
                        }
                    }
                    let v: f64 = tx.iter().zip(&ty).map(|(a, b)| a * b).sum();
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
        }
    }
    let mean = s / n;
    (mean, s2 / n - mean * mean)
}

#[test]
fn closed_form_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (d, dp, m) in [(2, 3, 4), (2, 2, 2), (3, 2, 4)] {
        let x = gauss(&mut rng, d * dp);
        let y = gauss(&mut rng, d * dp);
        let (mean, var) = enumerated_variance(&x, &y, d, dp, m);
        let r = exact_ts_variance(&x, &y, d, dp, m).unwrap();
        assert!((mean - r.expected_dot).abs() < 1e-10 * (1.0 + mean.abs()));
        assert!(
            (var - r.exact_variance).abs() < 1e-9 * (1.0 + var.abs()),
            "{d}x{dp} m={m}: enum {var} closed {}",
            r.exact_variance
        );
    }
}

#[test]
fn cs_closed_form_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (d, m) = (5, 4);
    let x = gauss(&mut rng, d);
    let y = gauss(&mut rng, d);
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
    for h in all_functions(d, m) {
        for sg in all_functions(d, 2) {
            let mut a = vec![0.0; m];
            let mut b = vec![0.0; m];
            for i in 0..d {
                let sign = 1.0 - 2.0 * sg[i] as f64;
                a[h[i]] += sign * x[i];
                b[h[i]] += sign * y[i];
            }
            let v: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
            s += v;
            s2 += v * v;
            n += 1.0;
        }
    }
    let var = s2 / n - (s / n).powi(2);
    let exact = exact_cs_variance(&x, &y, m).unwrap();
    assert!((var - exact).abs() < 1e-10 * (1.0 + var));
}

#[test]
fn witness_example_value() {
    let (d, dp, m) = (4usize, 6usize, 16usize);
    let w = witness_matrix(d, dp);
    let r = exact_ts_variance(&w, &w, d, dp, m).unwrap();
    let (df, dpf, mf) = (4.0, 6.0, 16.0);
    let want = (4.0 / (mf * mf)) * (1.0 + 1.0 / (df * dpf) - 1.0 / df - 1.0 / dpf)
        + (1.0 / mf) * (6.0 + 2.0 / (df * dpf) - 4.0 / df - 4.0 / dpf);
    assert!((r.exact_variance - want).abs() < 1e-14);
}

#[test]
fn tightness_gap_examples() {
    for m in [2, 4, 64] {
        assert!((tightness_gap(1, 1, m) - ts_bound_factor(m)).abs() < 1e-15);
    }
    let m = 2048;
    assert!(tightness_gap(1024, 1024, m) <= 0.01 * ts_bound_factor(m));
    for d in [2, 4, 8] {
        for dp in [2, 4, 8] {
            assert!(tightness_gap(d, dp, 16) > tightness_gap(2 * d, 2 * dp, 16));
            assert!(tightness_gap(d, dp, 16) > 0.0);
        }
    }
}

#[test]
fn improved_factor_beats_eight_over_m() {
    // 4/m^2 + 6/m < 8/m  <=>  m > 2; at m = 2 both sides are exactly 4.
    assert_eq!(ts_bound_factor(2), 4.0);
    let mut m = 4usize;
    while m <= 1 << 20 {
        assert!(ts_bound_factor(m) < 8.0 / m as f64);
        m += 2;
    }
}

#[test]
fn ts_monte_carlo_matches_exact_3x4() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gauss(&mut rng, 12);
    let y = gauss(&mut rng, 12);
    let m = 8;
    let samples = mc_ts_dots(&x, &y, 3, 4, m, 200_000, 17).unwrap();
    let r = exact_ts_variance(&x, &y, 3, 4, m).unwrap().with_samples(&samples);
    let z = r.variance_z().unwrap();
    assert!(z.abs() <= 5.0, "variance z {z}");
    let mo = SampleMoments::from_samples(&samples);
    assert!(mo.mean_z(r.expected_dot).abs() <= 4.0);
}

#[test]
fn cs_monte_carlo_matches_exact_d32() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gauss(&mut rng, 32);
    let y = gauss(&mut rng, 32);
    let m = 8;
    let samples = mc_cs_dots(&x, &y, m, 200_000, 18).unwrap();
    let mo = SampleMoments::from_samples(&samples);
    let exact = exact_cs_variance(&x, &y, m).unwrap();
    assert!(mo.variance_z(exact).abs() <= 5.0, "z {}", mo.variance_z(exact));
    let nx: f64 = x.iter().map(|v| v * v).sum();
    let ny: f64 = y.iter().map(|v| v * v).sum();
    assert!(exact <= 2.0 / m as f64 * nx * ny);
}

#[test]
fn large_witness_reaches_bound() {
    let (d, m) = (1024, 2048);
    let w = witness_matrix(d, d);
    let r = exact_ts_variance(&w, &w, d, d, m).unwrap();
    assert!((r.exact_variance - witness_variance(d, d, m)).abs() < 1e-9 * r.bound);
    assert!(r.exact_variance >= 0.99 * r.bound);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn variance_between_zero_and_bound(seed in any::<u64>(), d in 2usize..=8, dp in 2usize..=8, logm in 1u32..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gauss(&mut rng, d * dp);
        let y = gauss(&mut rng, d * dp);
        let r = exact_ts_variance(&x, &y, d, dp, 1 << logm).unwrap();
        let tol = 1e-12 * r.bound;
        prop_assert!(r.exact_variance >= -tol);
        prop_assert!(r.exact_variance <= r.bound + tol);
    }

    #[test]
    fn n2_groupings_agree(seed in any::<u64>(), d in 1usize..=6, dp in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gauss(&mut rng, d * dp);
        let y = gauss(&mut rng, d * dp);
        let r = exact_ts_variance(&x, &y, d, dp, 4).unwrap();
        // 3 x (diagonal norms) + both traces, computed from scratch.
        let mut xty = vec![0.0; dp * dp];
        let mut xyt = vec![0.0; d * d];
        for a in 0..dp { for b in 0..dp { for i in 0..d { xty[a * dp + b] += x[i * dp + a] * y[i * dp + b]; } } }
        for a in 0..d { for b in 0..d { for j in 0..dp { xyt[a * d + b] += x[a * dp + j] * y[b * dp + j]; } } }
        let diag: f64 = (0..dp).map(|a| xty[a * dp + a].powi(2)).sum::<f64>()
            + (0..d).map(|a| xyt[a * d + a].powi(2)).sum::<f64>();
        let rows: f64 = (0..d).map(|i| {
            let nx: f64 = (0..dp).map(|j| x[i * dp + j].powi(2)).sum();
            let ny: f64 = (0..dp).map(|j| y[i * dp + j].powi(2)).sum();
            nx * ny
        }).sum();
        let cols: f64 = (0..dp).map(|j| {
            let nx: f64 = (0..d).map(|i| x[i * dp + j].powi(2)).sum();
            let ny: f64 = (0..d).map(|i| y[i * dp + j].powi(2)).sum();
            nx * ny
        }).sum();
        let n2_alt = 3.0 * diag + rows + cols;
        prop_assert!((r.n2 - n2_alt).abs() <= 1e-9 * (1.0 + n2_alt.abs()));
        let inner: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        prop_assert!((r.expected_dot - inner).abs() <= 1e-9 * (1.0 + inner.abs()));
    }
}
