use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayViewMut2, Axis};

use super::config::{Injection, ModelConfig};
use super::forward::{activation_grad, view1, view2, LnCache, StepCache, StepTrace};
use super::params::*;
use crate::error::{shape, Error, Result};
use crate::tensor::{NamedTensors, Tensor};

/// Per-token backward signals for one body tensor at one loop step.
///
/// `deltas` is `rows x d_out` (gradient at the tensor's output), `acts` is
/// `rows x d_in` (its input) for matrices and absent for vectors, so that
/// `phi_t = sum_j delta_j (x) a_j` or `sum_j delta_j`.
#[derive(Clone, Copy, Debug)]
pub struct FactorBlock<'a> {
    /// 1-indexed loop step.
    pub step: usize,
    /// Index into [`BODY_TENSORS`].
    pub tensor: usize,
    pub rows: usize,
    pub deltas: &'a [f64],
    pub acts: Option<&'a [f64]>,
}

impl FactorBlock<'_> {
    pub fn d_out(&self) -> usize {
        self.deltas.len() / self.rows.max(1)
    }

    pub fn d_in(&self) -> Option<usize> {
        self.acts.map(|a| a.len() / self.rows.max(1))
    }
}

/// Receives factor blocks as the backward pass produces them. Steps that get
/// no gradient (after the read-out, or before the truncation window) are
/// never emitted.
pub trait FactorSink {
    fn emit(&mut self, block: &FactorBlock<'_>) -> Result<()>;
}

impl FactorSink for () {
    fn emit(&mut self, _: &FactorBlock<'_>) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// Gradient of every parameter, in parameter order.
    pub grads: NamedTensors,
}

impl Gradients {
    pub fn body(&self) -> NamedTensors {
        body_subset(&self.grads)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFactors {
    pub rows: usize,
    pub deltas: Vec<f64>,
    pub acts: Option<Vec<f64>>,
}

/// Stored factors for one example: `steps[t - 1][k]` for step `t` and body
/// tensor `k`; `None` means a zero contribution.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFactors {
    pub horizon: usize,
    pub readout_step: usize,
    pub shapes: Vec<(String, Vec<usize>)>,
    pub steps: Vec<Vec<Option<TensorFactors>>>,
}

impl StepFactors {
    pub fn new(cfg: &ModelConfig, horizon: usize, readout_step: usize) -> Self {
        Self {
            horizon,
            readout_step,
            shapes: body_shapes(cfg),
            steps: vec![vec![None; BODY_TENSORS.len()]; horizon],
        }
    }

    /// Sends every stored block to `sink` in step order.
    pub fn replay(&self, sink: &mut dyn FactorSink) -> Result<()> {
        for (t, per) in self.steps.iter().enumerate() {
            for (k, f) in per.iter().enumerate() {
                if let Some(f) = f {
                    sink.emit(&FactorBlock {
                        step: t + 1,
                        tensor: k,
                        rows: f.rows,
                        deltas: &f.deltas,
                        acts: f.acts.as_deref(),
                    })?;
                }
            }
        }
        Ok(())
    }

    /// Explicit `phi_t` for one step (1-indexed).
    pub fn step_gradient(&self, t: usize) -> NamedTensors {
        let mut out: NamedTensors = self
            .shapes
            .iter()
            .map(|(n, s)| (n.clone(), Tensor::zeros(s)))
            .collect();
        for (k, f) in self.steps[t - 1].iter().enumerate() {
            let Some(f) = f else { continue };
            let g = out.at_mut(k);
            match &f.acts {
                Some(a) => {
                    let (d_out, d_in) = (g.shape[0], g.shape[1]);
                    for r in 0..f.rows {
                        let dr = &f.deltas[r * d_out..(r + 1) * d_out];
                        let ar = &a[r * d_in..(r + 1) * d_in];
                        for (i, &di) in dr.iter().enumerate() {
                            for (o, &aj) in g.data[i * d_in..(i + 1) * d_in].iter_mut().zip(ar) {
                                *o += di * aj;
                            }
                        }
                    }
                }
                None => {
                    let d = g.data.len();
                    for r in 0..f.rows {
                        for (o, &v) in g.data.iter_mut().zip(&f.deltas[r * d..(r + 1) * d]) {
                            *o += v;
                        }
                    }
                }
            }
        }
        out
    }
}

impl FactorSink for StepFactors {
    fn emit(&mut self, b: &FactorBlock<'_>) -> Result<()> {
        let slot = self
            .steps
            .get_mut(b.step.wrapping_sub(1))
            .and_then(|s| s.get_mut(b.tensor))
            .ok_or_else(|| shape(format!("factor for step {} tensor {} out of range", b.step, b.tensor)))?;
        *slot = Some(TensorFactors {
            rows: b.rows,
            deltas: b.deltas.to_vec(),
            acts: b.acts.map(<[f64]>::to_vec),
        });
        Ok(())
    }
}

/// `phi_1..phi_tau` as explicit tensors.
pub fn materialize_step_gradients(f: &StepFactors) -> Vec<NamedTensors> {
    (1..=f.horizon).map(|t| f.step_gradient(t)).collect()
}

struct Backprop<'s> {
    grads: NamedTensors,
    sink: &'s mut dyn FactorSink,
}

impl Backprop<'_> {
    fn add_matrix(&mut self, idx: usize, deltas: &Array2<f64>, acts: &Array2<f64>) {
        let t = self.grads.at_mut(idx);
        let mut g = ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut t.data).expect("matrix");
        general_mat_mul(1.0, &deltas.t(), acts, 1.0, &mut g);
    }

    fn add_vector(&mut self, idx: usize, deltas: &Array2<f64>) {
        let t = self.grads.at_mut(idx);
        for row in deltas.rows() {
            for (o, v) in t.data.iter_mut().zip(row) {
                *o += v;
            }
        }
    }

    fn matrix(&mut self, step: usize, k: usize, deltas: &Array2<f64>, acts: &Array2<f64>) -> Result<()> {
        self.add_matrix(BODY_OFFSET + k, deltas, acts);
        self.sink.emit(&FactorBlock {
            step,
            tensor: k,
            rows: deltas.nrows(),
            deltas: deltas.as_slice().expect("standard layout"),
            acts: Some(acts.as_slice().expect("standard layout")),
        })
    }

    fn vector(&mut self, step: usize, k: usize, deltas: &Array2<f64>) -> Result<()> {
        self.add_vector(BODY_OFFSET + k, deltas);
        self.sink.emit(&FactorBlock {
            step,
            tensor: k,
            rows: deltas.nrows(),
            deltas: deltas.as_slice().expect("standard layout"),
            acts: None,
        })
    }
}

fn ln_backward(du: &Array2<f64>, g: ArrayView1<f64>, c: &LnCache) -> Array2<f64> {
    let d = du.ncols() as f64;
    let mut dx = du * &g;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.rstd) {
        let m1 = row.sum() / d;
        let m2 = row.dot(&xh) / d;
        row.zip_mut_with(&xh, |v, &x| *v = r * (*v - m1 - x * m2));
    }
    dx
}

fn attention_backward(
    cfg: &ModelConfig,
    c: &StepCache,
    d_o: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for (h, p) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let doh = d_o.slice(cols);
        let dp = doh.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&doh));
        let mut ds = &dp * p;
        let rs = ds.sum_axis(Axis(1));
        for ((mut row, pr), r) in ds.rows_mut().into_iter().zip(p.rows()).zip(&rs) {
            row.zip_mut_with(&pr, |v, &pp| *v -= pp * r);
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    (dq, dk, dv)
}

/// Backpropagates through one body application; returns the gradient with
/// respect to the step input `x`.
fn body_backward(
    bp: &mut Backprop<'_>,
    p: &Parameters,
    cfg: &ModelConfig,
    step: usize,
    c: &StepCache,
    dh: &Array2<f64>,
) -> Result<Array2<f64>> {
    let b = BODY_OFFSET;
    // h = y + W2 act + b2
    bp.matrix(step, W2, dh, &c.act)?;
    bp.vector(step, B2, dh)?;
    let mut dz1 = dh.dot(&view2(p, b + W2));
    dz1.zip_mut_with(&c.z1, |g, &z| *g *= activation_grad(cfg.nonlinearity, z));
    bp.matrix(step, W1, &dz1, &c.u2)?;
    bp.vector(step, B1, &dz1)?;
    let du2 = dz1.dot(&view2(p, b + W1));
    bp.vector(step, LN2_G, &(&du2 * &c.ln2.xhat))?;
    bp.vector(step, LN2_B, &du2)?;
    let dy = dh + &ln_backward(&du2, view1(p, b + LN2_G), &c.ln2);
    // y = x + Wo o + bo
    bp.matrix(step, WO, &dy, &c.o)?;
    bp.vector(step, BO, &dy)?;
    let d_o = dy.dot(&view2(p, b + WO));
    let (dq, dk, dv) = attention_backward(cfg, c, &d_o);
    bp.matrix(step, WQ, &dq, &c.u1)?;
    bp.vector(step, BQ, &dq)?;
    bp.matrix(step, WK, &dk, &c.u1)?;
    bp.vector(step, BK, &dk)?;
    bp.matrix(step, WV, &dv, &c.u1)?;
    bp.vector(step, BV, &dv)?;
    let mut du1 = dq.dot(&view2(p, b + WQ));
    du1 += &dk.dot(&view2(p, b + WK));
    du1 += &dv.dot(&view2(p, b + WV));
    bp.vector(step, LN1_G, &(&du1 * &c.ln1.xhat))?;
    bp.vector(step, LN1_B, &du1)?;
    Ok(dy + &ln_backward(&du1, view1(p, b + LN1_G), &c.ln1))
}

/// First loop step that receives gradient under the configured truncation.
pub fn first_live_step(cfg: &ModelConfig, horizon: usize) -> usize {
    match cfg.truncation_k {
        Some(k) => horizon.saturating_sub(k) + 1,
        None => 1,
    }
}

/// Full (or truncated) BPTT from the read-out. Body factors are streamed to
/// `sink`; all parameter gradients are returned.
pub fn backward_into(
    trace: &StepTrace,
    p: &Parameters,
    cfg: &ModelConfig,
    sink: &mut dyn FactorSink,
) -> Result<Gradients> {
    if trace.fingerprint != p.fingerprint() {
        return Err(Error::Input("trace was produced with different parameters".into()));
    }
    let ex = &trace.example;
    let mut bp = Backprop {
        grads: p.tensors.zeros_like(),
        sink,
    };

    // Read-out.
    let ro = &trace.readout;
    let n_mask = ex.loss_mask.iter().filter(|&&m| m).count() as f64;
    let mut dlogits = Array2::zeros(ro.probs.raw_dim());
    for (j, &m) in ex.loss_mask.iter().enumerate() {
        if m {
            let mut row = dlogits.row_mut(j);
            row.assign(&ro.probs.row(j));
            row[ex.targets[j]] -= 1.0;
            row /= n_mask;
        }
    }
    bp.add_matrix(HEAD_W, &dlogits, &ro.uf);
    bp.add_vector(HEAD_B, &dlogits);
    let duf = dlogits.dot(&view2(p, HEAD_W));
    bp.add_vector(LNF_G, &(&duf * &ro.lnf.xhat));
    bp.add_vector(LNF_B, &duf);
    let mut dh = ln_backward(&duf, view1(p, LNF_G), &ro.lnf);

    // Loop body, from the read-out step down.
    let first = first_live_step(cfg, trace.horizon);
    let mut dinj = Array2::<f64>::zeros(dh.raw_dim());
    let mut reached_h0 = true;
    for t in (1..=trace.readout_step).rev() {
        if t < first {
            reached_h0 = false;
            break;
        }
        let dx = body_backward(&mut bp, p, cfg, t, &trace.steps[t - 1], &dh)?;
        if cfg.injection == Injection::Additive {
            dinj += &dx;
        }
        dh = dx;
    }
    let dh0 = if reached_h0 { dh + &dinj } else { dinj };

    // Read-in.
    let d = cfg.d_model;
    for (j, &tok) in ex.tokens.iter().enumerate() {
        let row = dh0.row(j);
        let te = bp.grads.at_mut(TOK_EMB);
        for (o, v) in te.data[tok * d..(tok + 1) * d].iter_mut().zip(row) {
            *o += v;
        }
        let pe = bp.grads.at_mut(POS_EMB);
        for (o, v) in pe.data[j * d..(j + 1) * d].iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(Gradients {
        loss: trace.loss,
        grads: bp.grads,
    })
}

/// Backward pass that also records every factor block.
pub fn backward_with_hooks(
    trace: &StepTrace,
    p: &Parameters,
    cfg: &ModelConfig,
) -> Result<(Gradients, StepFactors)> {
    let mut factors = StepFactors::new(cfg, trace.horizon, trace.readout_step);
    let g = backward_into(trace, p, cfg, &mut factors)?;
    Ok((g, factors))
}

/// Loss and full gradient for one example.
pub fn gradient(p: &Parameters, cfg: &ModelConfig, ex: &super::forward::Example) -> Result<Gradients> {
    let trace = super::forward::forward(p, cfg, ex)?;
    backward_into(&trace, p, cfg, &mut ())
}
