use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sdikit::model::{
    backward_with_hooks, forward, gradient, loss, materialize_step_gradients, Example, Injection,
    ModelConfig, Nonlinearity, Parameters, BODY_OFFSET, BODY_TENSORS,
};
use sdikit::NamedTensors;

fn tiny_cfg(tau: usize, injection: Injection, nl: Nonlinearity) -> ModelConfig {
    let mut cfg = ModelConfig::micro(6, 8, 2, 8, tau);
    cfg.injection = injection;
    cfg.nonlinearity = nl;
    cfg.seed = 3;
    cfg
}

/// Every parameter drawn at random so no gradient path is trivially zero.
fn random_params(cfg: &ModelConfig, seed: u64) -> Parameters {
    let mut p = Parameters::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in p.tensors.iter_mut() {
        let base = if name.ends_with(".g") { 1.0 } else { 0.0 };
        let sd = if t.rank() == 2 { 0.4 } else { 0.3 };
        for v in t.data.iter_mut() {
            *v = base + sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    p
}

fn example(rng: &mut ChaCha8Rng, l: usize, tau: usize, readout: usize) -> Example {
    let tokens: Vec<usize> = (0..l).map(|_| rng.random_range(0..6)).collect();
    let targets: Vec<usize> = (0..l).map(|_| rng.random_range(0..6)).collect();
    let mut loss_mask = vec![false; l];
    loss_mask[l - 1] = true;
    loss_mask[l / 2] = true;
    Example {
        tokens,
        targets,
        loss_mask,
        readout_step: readout,
        loop_horizon: Some(tau),
    }
}

fn finite_difference(p: &Parameters, cfg: &ModelConfig, ex: &Example, eps: f64) -> NamedTensors {
    let mut out = p.tensors.zeros_like();
    let mut q = p.clone();
    for i in 0..p.tensors.len() {
        for k in 0..p.at(i).len() {
            let orig = q.tensors.at(i).data[k];
            q.tensors.at_mut(i).data[k] = orig + eps;
            let up = loss(&q, cfg, ex).unwrap();
            q.tensors.at_mut(i).data[k] = orig - eps;
            let down = loss(&q, cfg, ex).unwrap();
            q.tensors.at_mut(i).data[k] = orig;
            out.at_mut(i).data[k] = (up - down) / (2.0 * eps);
        }
    }
    out
}

/// `attn.bk` shifts every score in a row by the same amount, which softmax
/// ignores, so its true gradient is zero and only an absolute check applies.
fn check_tensor(name: &str, g: &[f64], fd: &[f64], what: &str) {
    if name == "attn.bk" {
        let gm = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let fm = fd.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(gm <= 1e-12 && fm <= 1e-8, "{what} {name}: {gm:e} {fm:e}");
        return;
    }
    let r = rel(g, fd);
    assert!(r <= 1e-5, "{what} {name}: rel err {r:e}");
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn bptt_matches_finite_differences() {
    for injection in [Injection::Additive, Injection::None] {
        for tau in [1usize, 2, 4, 8] {
            let cfg = tiny_cfg(tau, injection, Nonlinearity::Gelu);
            let p = random_params(&cfg, 10 + tau as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(tau as u64);
            let ex = example(&mut rng, 5, tau, tau);
            let g = gradient(&p, &cfg, &ex).unwrap();
            let fd = finite_difference(&p, &cfg, &ex, 1e-5);
            for i in 0..p.tensors.len() {
                let what = format!("{injection:?} tau={tau}");
                check_tensor(p.tensors.name_at(i), &g.grads.at(i).data, &fd.at(i).data, &what);
            }
        }
    }
}

#[test]
fn bptt_matches_finite_differences_relu_bidirectional_early_readout() {
    let mut cfg = tiny_cfg(5, Injection::Additive, Nonlinearity::Relu);
    cfg.causal = false;
    let p = random_params(&cfg, 99);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ex = example(&mut rng, 6, 5, 3);
    let g = gradient(&p, &cfg, &ex).unwrap();
    let fd = finite_difference(&p, &cfg, &ex, 1e-6);
    for i in 0..p.tensors.len() {
        check_tensor(p.tensors.name_at(i), &g.grads.at(i).data, &fd.at(i).data, "relu");
    }
}

#[test]
fn step_gradients_sum_to_body_gradient() {
    let cfg = tiny_cfg(6, Injection::Additive, Nonlinearity::Gelu);
    let p = random_params(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ex = example(&mut rng, 7, 6, 6);
    let trace = forward(&p, &cfg, &ex).unwrap();
    let (g, factors) = backward_with_hooks(&trace, &p, &cfg).unwrap();
    let steps = materialize_step_gradients(&factors);
    let mut sum = steps[0].zeros_like();
    for s in &steps {
        sum.axpy(1.0, s).unwrap();
    }
    let body = g.body();
    assert!(rel(&sum.flatten(), &body.flatten()) <= 1e-10);
    assert_eq!(body.len(), BODY_TENSORS.len());
}

#[test]
fn steps_after_readout_are_zero() {
    let cfg = tiny_cfg(8, Injection::Additive, Nonlinearity::Gelu);
    let p = random_params(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ex = example(&mut rng, 5, 8, 3);
    let trace = forward(&p, &cfg, &ex).unwrap();
    let (_, factors) = backward_with_hooks(&trace, &p, &cfg).unwrap();
    let steps = materialize_step_gradients(&factors);
    for s in &steps[3..] {
        assert!(s.flatten().iter().all(|&v| v == 0.0));
    }
    assert!(steps[2].norm_sq() > 0.0);
}

#[test]
fn truncation_zeroes_early_steps() {
    let mut cfg = tiny_cfg(6, Injection::Additive, Nonlinearity::Gelu);
    cfg.truncation_k = Some(2);
    let p = random_params(&cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ex = example(&mut rng, 5, 6, 6);
    let trace = forward(&p, &cfg, &ex).unwrap();
    let (g, factors) = backward_with_hooks(&trace, &p, &cfg).unwrap();
    let steps = materialize_step_gradients(&factors);
    for s in &steps[..4] {
        assert!(s.flatten().iter().all(|&v| v == 0.0));
    }
    let mut sum = steps[0].zeros_like();
    for s in &steps {
        sum.axpy(1.0, s).unwrap();
    }
    assert!(rel(&sum.flatten(), &g.body().flatten()) <= 1e-12);
}

#[test]
fn zero_body_unrolls_to_multiples_of_h0() {
    let cfg = tiny_cfg(5, Injection::Additive, Nonlinearity::Relu);
    let mut p = random_params(&cfg, 7);
    for k in 0..BODY_TENSORS.len() {
        let t = p.tensors.at_mut(BODY_OFFSET + k);
        if t.rank() == 2 || !BODY_TENSORS[k].ends_with(".g") {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ex = example(&mut rng, 4, 5, 5);
    let trace = forward(&p, &cfg, &ex).unwrap();
    let h0 = &trace.hidden[0];
    for t in 1..=5 {
        let want = h0 * (t as f64 + 1.0);
        let diff = (&trace.hidden[t] - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-12, "t={t}: {diff}");
    }
}

#[test]
fn tau_one_is_a_single_block() {
    let cfg = tiny_cfg(1, Injection::None, Nonlinearity::Gelu);
    let p = random_params(&cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ex = example(&mut rng, 5, 1, 1);
    let trace = forward(&p, &cfg, &ex).unwrap();
    assert_eq!(trace.hidden.len(), 2);
    // Readout at tau = 1 with horizon 3 sees the same hidden state.
    let mut ex3 = ex.clone();
    ex3.loop_horizon = Some(3);
    let t3 = forward(&p, &cfg, &ex3).unwrap();
    assert_eq!(trace.logits, t3.logits);
    assert_eq!(trace.loss, t3.loss);
}

#[test]
fn input_errors() {
    let cfg = tiny_cfg(2, Injection::Additive, Nonlinearity::Gelu);
    let p = Parameters::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ex = example(&mut rng, 4, 2, 2);
    ex.tokens[0] = 6;
    assert!(forward(&p, &cfg, &ex).is_err());
    let mut ex = example(&mut rng, 4, 2, 2);
    ex.readout_step = 3;
    assert!(forward(&p, &cfg, &ex).is_err());
    let ex = example(&mut rng, 9, 2, 2);
    assert!(forward(&p, &cfg, &ex).is_err());
    // Trace from other parameters.
    let ex = example(&mut rng, 4, 2, 2);
    let trace = forward(&p, &cfg, &ex).unwrap();
    let q = random_params(&cfg, 1);
    assert!(backward_with_hooks(&trace, &q, &cfg).is_err());
}

#[test]
fn forward_is_deterministic() {
    let cfg = tiny_cfg(4, Injection::Additive, Nonlinearity::Gelu);
    let a = Parameters::init(&cfg).unwrap();
    let b = Parameters::init(&cfg).unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ex = example(&mut rng, 5, 4, 4);
    let ga = gradient(&a, &cfg, &ex).unwrap();
    let gb = gradient(&b, &cfg, &ex).unwrap();
    assert_eq!(ga, gb);
}
