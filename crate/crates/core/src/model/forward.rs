use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::config::{Injection, ModelConfig, Nonlinearity};
use super::params::*;
use crate::error::{config, Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// One training or query sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    /// Target id per position; only read where `loss_mask` is set.
    pub targets: Vec<usize>,
    pub loss_mask: Vec<bool>,
    /// 1-indexed loop step whose hidden state feeds the read-out.
    pub readout_step: usize,
    /// Overrides `ModelConfig::loop_horizon` when set.
    pub loop_horizon: Option<usize>,
}

impl Example {
    pub fn horizon(&self, cfg: &ModelConfig) -> usize {
        self.loop_horizon.unwrap_or(cfg.loop_horizon)
    }
}

pub(crate) fn view2<'a>(p: &'a Parameters, i: usize) -> ArrayView2<'a, f64> {
    let t = p.at(i);
    ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("rank-2 parameter")
}

pub(crate) fn view1<'a>(p: &'a Parameters, i: usize) -> ArrayView1<'a, f64> {
    ArrayView1::from(&p.at(i).data[..])
}

/// `a W^T + b` applied row-wise.
pub(crate) fn affine(a: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut c = a.dot(&w.t());
    c += &b;
    c
}

pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mu = row.sum() / d;
        row -= mu;
        let var = row.dot(&row) / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let mut u = &xhat * &g;
    u += &b;
    (u, LnCache { xhat, rstd })
}

pub(crate) fn activation(kind: Nonlinearity, z: f64) -> f64 {
    match kind {
        Nonlinearity::Relu => z.max(0.0),
        Nonlinearity::Gelu => 0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh()),
    }
}

pub(crate) fn activation_grad(kind: Nonlinearity, z: f64) -> f64 {
    match kind {
        Nonlinearity::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Nonlinearity::Gelu => {
            let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
            0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
        }
    }
}

pub(crate) fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - mx).exp());
        let z = row.sum();
        row /= z;
    }
}

/// Activations cached by one application of the body.
pub(crate) struct StepCache {
    pub ln1: LnCache,
    pub u1: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Attention probabilities per head, `L x L`.
    pub probs: Vec<Array2<f64>>,
    pub o: Array2<f64>,
    pub ln2: LnCache,
    pub u2: Array2<f64>,
    pub z1: Array2<f64>,
    pub act: Array2<f64>,
}

pub(crate) struct ReadoutCache {
    pub lnf: LnCache,
    pub uf: Array2<f64>,
    pub probs: Array2<f64>,
}

/// Forward record: hidden states `h_0..h_tau`, read-out logits and loss, plus
/// the activation cache consumed by the backward pass.
pub struct StepTrace {
    /// `hidden[t]` is `h_t`, each `L x d`; `hidden[0]` is the read-in output.
    pub hidden: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub loss: f64,
    pub readout_step: usize,
    pub horizon: usize,
    pub(crate) example: Example,
    pub(crate) steps: Vec<StepCache>,
    pub(crate) readout: ReadoutCache,
    pub(crate) fingerprint: u64,
}

impl std::fmt::Debug for StepTrace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StepTrace")
            .field("horizon", &self.horizon)
            .field("readout_step", &self.readout_step)
            .field("loss", &self.loss)
            .finish_non_exhaustive()
    }
}

impl StepTrace {
    /// Predicted class at each masked position.
    pub fn predictions(&self) -> Vec<(usize, usize)> {
        self.example
            .loss_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(j, _)| {
                let row = self.logits.row(j);
                let arg = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0;
                (j, arg)
            })
            .collect()
    }

    /// True when every masked position is predicted correctly.
    pub fn is_correct(&self) -> bool {
        self.predictions()
            .into_iter()
            .all(|(j, p)| p == self.example.targets[j])
    }

    pub fn example(&self) -> &Example {
        &self.example
    }
}

fn validate(cfg: &ModelConfig, ex: &Example) -> Result<usize> {
    let l = ex.tokens.len();
    if l == 0 || l > cfg.seq_len {
        return Err(Error::Input(format!(
            "sequence length {l} outside [1, {}]",
            cfg.seq_len
        )));
    }
    if let Some(&t) = ex.tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Input(format!(
            "token id {t} >= vocab size {}",
            cfg.vocab_size
        )));
    }
    if ex.targets.len() != l || ex.loss_mask.len() != l {
        return Err(Error::Input("targets and loss mask must match the token count".into()));
    }
    if !ex.loss_mask.iter().any(|&m| m) {
        return Err(Error::Input("loss mask selects no position".into()));
    }
    for (j, &m) in ex.loss_mask.iter().enumerate() {
        if m && ex.targets[j] >= cfg.vocab_size {
            return Err(Error::Input(format!("target {} out of vocabulary", ex.targets[j])));
        }
    }
    let tau = ex.horizon(cfg);
    if tau == 0 {
        return Err(config("loop horizon must be at least 1"));
    }
    if ex.readout_step == 0 || ex.readout_step > tau {
        return Err(Error::Input(format!(
            "readout step {} outside [1, {tau}]",
            ex.readout_step
        )));
    }
    Ok(tau)
}

fn attention(cfg: &ModelConfig, q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
    let l = q.nrows();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut o = Array2::zeros((l, cfg.d_model));
    let mut probs = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t());
        sc *= scale;
        if cfg.causal {
            for i in 0..l {
                for j in i + 1..l {
                    sc[[i, j]] = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(&mut sc);
        o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
        probs.push(sc);
    }
    (probs, o)
}

/// One application of the body `F` to `x` (injection already added).
pub(crate) fn body_step(p: &Parameters, cfg: &ModelConfig, x: &Array2<f64>) -> (Array2<f64>, StepCache) {
    let b = BODY_OFFSET;
    let (u1, ln1) = layer_norm(x, view1(p, b + LN1_G), view1(p, b + LN1_B));
    let q = affine(&u1, view2(p, b + WQ), view1(p, b + BQ));
    let k = affine(&u1, view2(p, b + WK), view1(p, b + BK));
    let v = affine(&u1, view2(p, b + WV), view1(p, b + BV));
    let (probs, o) = attention(cfg, &q, &k, &v);
    let a = affine(&o, view2(p, b + WO), view1(p, b + BO));
    let y = x + &a;
    let (u2, ln2) = layer_norm(&y, view1(p, b + LN2_G), view1(p, b + LN2_B));
    let z1 = affine(&u2, view2(p, b + W1), view1(p, b + B1));
    let act = z1.mapv(|z| activation(cfg.nonlinearity, z));
    let z2 = affine(&act, view2(p, b + W2), view1(p, b + B2));
    let h = y + &z2;
    (
        h,
        StepCache {
            ln1,
            u1,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            u2,
            z1,
            act,
        },
    )
}

pub(crate) fn read_in(p: &Parameters, tokens: &[usize]) -> Array2<f64> {
    let tok = view2(p, TOK_EMB);
    let pos = view2(p, POS_EMB);
    let mut h0 = Array2::zeros((tokens.len(), tok.ncols()));
    for (j, &t) in tokens.iter().enumerate() {
        let mut row = h0.row_mut(j);
        row += &tok.row(t);
        row += &pos.row(j);
    }
    h0
}

/// Runs the loop for the example's full horizon and reads out at
/// `readout_step`. Loss is the mean cross-entropy over masked positions.
pub fn forward(p: &Parameters, cfg: &ModelConfig, ex: &Example) -> Result<StepTrace> {
    let tau = validate(cfg, ex)?;
    let h0 = read_in(p, &ex.tokens);
    let mut hidden = Vec::with_capacity(tau + 1);
    let mut steps = Vec::with_capacity(tau);
    hidden.push(h0);
    for t in 1..=tau {
        let prev = &hidden[t - 1];
        let x = match cfg.injection {
            Injection::Additive => prev + &hidden[0],
            Injection::None => prev.clone(),
        };
        let (h, cache) = body_step(p, cfg, &x);
        hidden.push(h);
        steps.push(cache);
    }
    let (uf, lnf) = layer_norm(&hidden[ex.readout_step], view1(p, LNF_G), view1(p, LNF_B));
    let logits = affine(&uf, view2(p, HEAD_W), view1(p, HEAD_B));
    let mut probs = logits.clone();
    softmax_rows(&mut probs);
    let n_mask = ex.loss_mask.iter().filter(|&&m| m).count() as f64;
    let mut loss = 0.0;
    for (j, _) in ex.loss_mask.iter().enumerate().filter(|(_, &m)| m) {
        let row = logits.row(j);
        let mx = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        loss += lse - row[ex.targets[j]];
    }
    loss /= n_mask;
    Ok(StepTrace {
        hidden,
        logits,
        loss,
        readout_step: ex.readout_step,
        horizon: tau,
        example: ex.clone(),
        steps,
        readout: ReadoutCache { lnf, uf, probs },
        fingerprint: p.fingerprint(),
    })
}

/// Read-out logits (`L x vocab`) for an arbitrary hidden state, e.g. an
/// intermediate `h_t` when probing every loop iteration.
pub fn readout_logits(p: &Parameters, h: &Array2<f64>) -> Array2<f64> {
    let (uf, _) = layer_norm(h, view1(p, LNF_G), view1(p, LNF_B));
    affine(&uf, view2(p, HEAD_W), view1(p, HEAD_B))
}

/// Loss only, without keeping caches (used by finite differences).
pub fn loss(p: &Parameters, cfg: &ModelConfig, ex: &Example) -> Result<f64> {
    Ok(forward(p, cfg, ex)?.loss)
}
