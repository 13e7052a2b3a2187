use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sdikit::sketch::{
    count_sketch, global_sketch, tensor_sketch_outer_sum, tensor_sketch_pair, CountSketch,
    HashFamily, SketchPlan, TensorSketch, MERSENNE_61,
};
use sdikit::stats::SampleMoments;
use sdikit::{NamedTensors, Tensor};

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Definitional TensorSketch: direct double sum over `H(i, j)` and `S(i, j)`.
fn ts_definition(ts: &TensorSketch, u: &[f64], v: &[f64]) -> Vec<f64> {
    let m = ts.sketch_dim();
    let mut out = vec![0.0; m];
    for (i, &ui) in u.iter().enumerate() {
        for (j, &vj) in v.iter().enumerate() {
            let h = (ts.left().bucket(i) + ts.right().bucket(j)) % m;
            out[h] += ts.left().sign(i) * ts.right().sign(j) * ui * vj;
        }
    }
    out
}

fn ts_definition_matrix(ts: &TensorSketch, w: &[f64], d_out: usize, d_in: usize) -> Vec<f64> {
    let m = ts.sketch_dim();
    let mut out = vec![0.0; m];
    for i in 0..d_out {
        for j in 0..d_in {
            let h = (ts.left().bucket(i) + ts.right().bucket(j)) % m;
            out[h] += ts.left().sign(i) * ts.right().sign(j) * w[i * d_in + j];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Upper 0.1% point of chi-square via the Wilson-Hilferty approximation.
fn chi2_crit_001(k: f64) -> f64 {
    let z = 3.090_232;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

fn chi2(counts: &[u64], total: u64) -> f64 {
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn bucket_hash_pairwise_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (d, m) = (16usize, 4u64);
    let draws = 100_000u64;
    let pairs = [(0usize, 1usize), (3, 15), (7, 8)];
    let mut counts = vec![vec![0u64; (m * m) as usize]; pairs.len()];
    for _ in 0..draws {
        let h = HashFamily::bucket(d, m as usize, &mut rng).unwrap();
        for (p, &(i, j)) in pairs.iter().enumerate() {
            counts[p][(h.eval(i) * m + h.eval(j)) as usize] += 1;
        }
    }
    let crit = chi2_crit_001((m * m - 1) as f64);
    for c in &counts {
        let stat = chi2(c, draws);
        assert!(stat < crit, "chi2 {stat} >= {crit}");
    }
}

#[test]
fn sign_hash_fourwise_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws = 100_000u64;
    let quads = [[0usize, 1, 2, 3], [2, 5, 11, 13]];
    let mut counts = vec![vec![0u64; 16]; quads.len()];
    for _ in 0..draws {
        let s = HashFamily::sign(16, &mut rng).unwrap();
        for (q, idx) in quads.iter().enumerate() {
            let cell = idx
                .iter()
                .fold(0usize, |acc, &i| acc * 2 + usize::from(s.sign_at(i) > 0.0));
            counts[q][cell] += 1;
        }
    }
    let crit = chi2_crit_001(15.0);
    for c in &counts {
        let stat = chi2(c, draws);
        assert!(stat < crit, "chi2 {stat} >= {crit}");
    }
}

#[test]
fn hash_values_follow_the_polynomial() {
    let h = HashFamily {
        degree: 3,
        coefficients: vec![5, 7, 11, 13],
        domain_size: 10,
        range: 2,
    };
    for i in 0..10u128 {
        let v = (5 + 7 * i + 11 * i * i + 13 * i * i * i) % MERSENNE_61 as u128;
        assert_eq!(h.field_value(i as usize) as u128, v);
        assert_eq!(h.sign_at(i as usize), if v.is_multiple_of(2) { 1.0 } else { -1.0 });
    }
}

#[test]
fn count_sketch_of_zero_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = HashFamily::bucket(20, 8, &mut rng).unwrap();
    let s = HashFamily::sign(20, &mut rng).unwrap();
    assert_eq!(count_sketch(&[0.0; 20], &h, &s, 8).unwrap(), vec![0.0; 8]);
}

#[test]
fn count_sketch_injective_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 6;
    let buckets: Vec<u32> = vec![3, 0, 7, 1, 5, 2];
    let signs: Vec<f64> = (0..d).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
    let cs = CountSketch::from_tables(buckets, signs, 8).unwrap();
    let x = gauss(&mut rng, d);
    let y = gauss(&mut rng, d);
    let got = dot(&cs.apply(&x).unwrap(), &cs.apply(&y).unwrap());
    assert!((got - dot(&x, &y)).abs() < 1e-12);
}

#[test]
fn count_sketch_domain_mismatch_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = HashFamily::bucket(4, 8, &mut rng).unwrap();
    let s = HashFamily::sign(4, &mut rng).unwrap();
    assert!(count_sketch(&[1.0; 5], &h, &s, 8).is_err());
}

#[test]
fn count_sketch_unbiased_d64_m16() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = gauss(&mut rng, 64);
    let y = gauss(&mut rng, 64);
    let samples = sdikit::variance::mc_cs_dots(&x, &y, 16, 10_000, 77).unwrap();
    let mo = SampleMoments::from_samples(&samples);
    assert!(mo.mean_z(dot(&x, &y)).abs() <= 4.0, "z = {}", mo.mean_z(dot(&x, &y)));
}

#[test]
fn tensor_sketch_basis_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ts = TensorSketch::sample(4, 3, 8, &mut rng).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            let mut u = vec![0.0; 4];
            let mut v = vec![0.0; 3];
            u[i] = 1.0;
            v[j] = 1.0;
            let out = ts.pair(&u, &v).unwrap();
            for (k, &o) in out.iter().enumerate() {
                if k == ts.bucket(i, j) {
                    assert!((o - ts.sign(i, j)).abs() < 1e-12);
                } else {
                    assert!(o.abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn tensor_sketch_rejects_non_power_of_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    assert!(TensorSketch::sample(3, 3, 12, &mut rng).is_err());
    let left = CountSketch::sample(3, 6, &mut rng).unwrap();
    let right = CountSketch::sample(3, 6, &mut rng).unwrap();
    assert!(TensorSketch::new(left, right).is_err());
}

#[test]
fn tensor_sketch_zero_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ts = TensorSketch::sample(5, 7, 8, &mut rng).unwrap();
    assert!(ts.pair(&[0.0; 5], &[0.0; 7]).unwrap().iter().all(|v| v.abs() < 1e-15));
    assert_eq!(ts.outer_sum(&[]).unwrap(), vec![0.0; 8]);
}

#[test]
fn fft_path_matches_definition_d5_d7_m8() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ts = TensorSketch::sample(5, 7, 8, &mut rng).unwrap();
    let u = gauss(&mut rng, 5);
    let v = gauss(&mut rng, 7);
    let fast = ts.pair(&u, &v).unwrap();
    let slow = ts_definition(&ts, &u, &v);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn fft_path_matches_definition_exhaustive_shapes() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for m in [4usize, 8, 16] {
            for d_out in 1..=8 {
                for d_in in 1..=8 {
                    let ts = TensorSketch::sample(d_out, d_in, m, &mut rng).unwrap();
                    let u = gauss(&mut rng, d_out);
                    let v = gauss(&mut rng, d_in);
                    let fast = ts.pair(&u, &v).unwrap();
                    let slow = ts_definition(&ts, &u, &v);
                    for (a, b) in fast.iter().zip(&slow) {
                        assert!((a - b).abs() <= 1e-10, "seed {seed} m {m} {d_out}x{d_in}");
                    }
                }
            }
        }
    }
}

#[test]
fn outer_sum_single_pair_matches_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ts = TensorSketch::sample(4, 6, 16, &mut rng).unwrap();
    let u = gauss(&mut rng, 4);
    let v = gauss(&mut rng, 6);
    assert_eq!(ts.outer_sum(&[(u.clone(), v.clone())]).unwrap(), ts.pair(&u, &v).unwrap());
}

#[test]
fn outer_sum_matches_materialized_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (d_out, d_in, m) = (4, 3, 8);
    let ts = TensorSketch::sample(d_out, d_in, m, &mut rng).unwrap();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        (0..6).map(|_| (gauss(&mut rng, d_out), gauss(&mut rng, d_in))).collect();
    let mut w = vec![0.0; d_out * d_in];
    for (u, v) in &pairs {
        for i in 0..d_out {
            for j in 0..d_in {
                w[i * d_in + j] += u[i] * v[j];
            }
        }
    }
    let got = ts.outer_sum(&pairs).unwrap();
    let want = ts_definition_matrix(&ts, &w, d_out, d_in);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
    let dense = ts.apply_dense(&w, d_out, d_in).unwrap();
    for (a, b) in dense.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn outer_sum_negations_cancel() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ts = TensorSketch::sample(5, 4, 16, &mut rng).unwrap();
    let mut pairs = Vec::new();
    for _ in 0..4 {
        let u = gauss(&mut rng, 5);
        let v = gauss(&mut rng, 4);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        pairs.push((u, v.clone()));
        pairs.push((neg, v));
    }
    assert!(ts.outer_sum(&pairs).unwrap().iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn free_functions_agree_with_structs() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let h1 = HashFamily::bucket(5, 8, &mut rng).unwrap();
    let s1 = HashFamily::sign(5, &mut rng).unwrap();
    let h2 = HashFamily::bucket(3, 8, &mut rng).unwrap();
    let s2 = HashFamily::sign(3, &mut rng).unwrap();
    let u = gauss(&mut rng, 5);
    let v = gauss(&mut rng, 3);
    let ts = TensorSketch::new(
        CountSketch::from_hashes(&h1, &s1).unwrap(),
        CountSketch::from_hashes(&h2, &s2).unwrap(),
    )
    .unwrap();
    let a = tensor_sketch_pair(&u, &v, &ts).unwrap();
    let left = count_sketch(&u, &h1, &s1, 8).unwrap();
    let right = count_sketch(&v, &h2, &s2, 8).unwrap();
    let mut conv = vec![0.0; 8];
    for (p, lp) in left.iter().enumerate() {
        for (q, rq) in right.iter().enumerate() {
            conv[(p + q) % 8] += lp * rq;
        }
    }
    for (x, y) in a.iter().zip(&conv) {
        assert!((x - y).abs() < 1e-12);
    }
    let b = tensor_sketch_outer_sum(&[(u.clone(), v.clone())], &ts).unwrap();
    assert_eq!(a, b);
}

fn toy_model_grads(rng: &mut ChaCha8Rng) -> NamedTensors {
    let mut g = NamedTensors::new();
    g.push("bias", Tensor::vector(gauss(rng, 6)));
    g.push("weight", Tensor::from_vec(&[3, 4], gauss(rng, 12)).unwrap());
    g
}

#[test]
fn global_sketch_unbiased_over_plan_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let g = toy_model_grads(&mut rng);
    let p = toy_model_grads(&mut rng);
    let truth = dot(&g.flatten(), &p.flatten());
    let samples: Vec<f64> = (0..1000u64)
        .map(|s| {
            let plan = SketchPlan::for_tensors(s, 8, &g).unwrap();
            global_sketch(&g, &plan)
                .unwrap()
                .dot(&global_sketch(&p, &plan).unwrap())
                .unwrap()
        })
        .collect();
    let mo = SampleMoments::from_samples(&samples);
    assert!(mo.mean_z(truth).abs() <= 4.0, "z = {}", mo.mean_z(truth));
}

#[test]
fn plan_is_deterministic_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let g = toy_model_grads(&mut rng);
    let a = SketchPlan::for_tensors(99, 32, &g).unwrap();
    let b = SketchPlan::for_tensors(99, 32, &g).unwrap();
    let (sa, sb) = (global_sketch(&g, &a).unwrap(), global_sketch(&g, &b).unwrap());
    assert!(sa.values.iter().zip(&sb.values).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn global_sketch_is_linear(seed in 0u64..1_000_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = toy_model_grads(&mut rng);
        let p = toy_model_grads(&mut rng);
        let plan = SketchPlan::for_tensors(seed ^ 0xabc, 16, &g).unwrap();
        let mut combo = g.zeros_like();
        combo.axpy(a, &g).unwrap();
        combo.axpy(b, &p).unwrap();
        let lhs = global_sketch(&combo, &plan).unwrap().values;
        let sg = global_sketch(&g, &plan).unwrap().values;
        let sp = global_sketch(&p, &plan).unwrap().values;
        let rhs: Vec<f64> = sg.iter().zip(&sp).map(|(x, y)| a * x + b * y).collect();
        let scale = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let err = lhs.iter().zip(&rhs).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err / scale <= 1e-12);
    }

    #[test]
    fn count_sketch_is_linear(seed in 0u64..1_000_000, a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs = CountSketch::sample(12, 4, &mut rng).unwrap();
        let x = gauss(&mut rng, 12);
        let y = gauss(&mut rng, 12);
        let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
        let lhs = cs.apply(&z).unwrap();
        let (sx, sy) = (cs.apply(&x).unwrap(), cs.apply(&y).unwrap());
        for k in 0..4 {
            prop_assert!((lhs[k] - (a * sx[k] + sy[k])).abs() <= 1e-12 * (1.0 + lhs[k].abs()));
        }
    }

    #[test]
    fn buckets_and_signs_in_range(seed in any::<u64>(), m in 1usize..64, i in 0usize..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = HashFamily::bucket(100, m, &mut rng).unwrap();
        let s = HashFamily::sign(100, &mut rng).unwrap();
        prop_assert!(h.eval(i) < m as u64);
        prop_assert!(s.sign_at(i) == 1.0 || s.sign_at(i) == -1.0);
        prop_assert_eq!(h.eval(i), h.eval(i));
    }
}
