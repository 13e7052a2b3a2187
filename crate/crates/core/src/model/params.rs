use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::error::{config, Result};
use crate::tensor::{NamedTensors, Tensor};

/// Loop-body tensors in parameter order. Matrices are stored `d_out x d_in`
/// and used as `c = W a + b`.
pub const BODY_TENSORS: [&str; 16] = [
    "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.g", "ln2.b", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
];

pub const LN1_G: usize = 0;
pub const LN1_B: usize = 1;
pub const WQ: usize = 2;
pub const BQ: usize = 3;
pub const WK: usize = 4;
pub const BK: usize = 5;
pub const WV: usize = 6;
pub const BV: usize = 7;
pub const WO: usize = 8;
pub const BO: usize = 9;
pub const LN2_G: usize = 10;
pub const LN2_B: usize = 11;
pub const W1: usize = 12;
pub const B1: usize = 13;
pub const W2: usize = 14;
pub const B2: usize = 15;

pub const TOK_EMB: usize = 0;
pub const POS_EMB: usize = 1;
/// Position of the first body tensor in the full parameter list.
pub const BODY_OFFSET: usize = 2;
pub const LNF_G: usize = BODY_OFFSET + 16;
pub const LNF_B: usize = LNF_G + 1;
pub const HEAD_W: usize = LNF_G + 2;
pub const HEAD_B: usize = LNF_G + 3;
pub const NUM_TENSORS: usize = HEAD_B + 1;

/// Which of the three functional blocks a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    ReadIn,
    Body,
    ReadOut,
}

pub fn block_of(index: usize) -> Block {
    match index {
        i if i < BODY_OFFSET => Block::ReadIn,
        i if i < LNF_G => Block::Body,
        _ => Block::ReadOut,
    }
}

pub fn body_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (cfg.d_model, cfg.d_ff);
    let shapes: [Vec<usize>; 16] = [
        vec![d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d],
        vec![d],
        vec![f, d],
        vec![f],
        vec![d, f],
        vec![d],
    ];
    BODY_TENSORS
        .iter()
        .zip(shapes)
        .map(|(n, s)| (n.to_string(), s))
        .collect()
}

/// `(name, shape)` for every parameter in order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, v) = (cfg.d_model, cfg.vocab_size);
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d]),
        ("pos_emb".to_string(), vec![cfg.seq_len, d]),
    ];
    out.extend(body_shapes(cfg));
    out.push(("lnf.g".to_string(), vec![d]));
    out.push(("lnf.b".to_string(), vec![d]));
    out.push(("head.w".to_string(), vec![v, d]));
    out.push(("head.b".to_string(), vec![v]));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub tensors: NamedTensors,
}

impl Parameters {
    /// Gaussian init: matrices `N(0, 1/fan_in)`, residual outputs (`attn.wo`,
    /// `mlp.w2`) additionally scaled by `1/sqrt(2 tau)`, embeddings `N(0, 1)`,
    /// gains one, biases zero.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let residual = 1.0 / (2.0 * cfg.loop_horizon as f64).sqrt();
        let mut tensors = NamedTensors::new();
        for (i, (name, shape)) in param_layout(cfg).into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let std = match (shape.len(), i) {
                (2, TOK_EMB | POS_EMB) => 1.0,
                (2, _) => {
                    let s = 1.0 / (shape[1] as f64).sqrt();
                    if i == BODY_OFFSET + WO || i == BODY_OFFSET + W2 {
                        s * residual
                    } else {
                        s
                    }
                }
                _ => 0.0,
            };
            let fill = if name.ends_with(".g") { 1.0 } else { 0.0 };
            let data = (0..n)
                .map(|_| {
                    if std > 0.0 {
                        std * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        fill
                    }
                })
                .collect();
            tensors.push(name, Tensor::from_vec(&shape, data)?);
        }
        Ok(Self { tensors })
    }

    pub fn from_tensors(cfg: &ModelConfig, tensors: NamedTensors) -> Result<Self> {
        cfg.validate()?;
        let layout = param_layout(cfg);
        if tensors.len() != layout.len() {
            return Err(config(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (i, (name, shape)) in layout.iter().enumerate() {
            if tensors.name_at(i) != name || &tensors.at(i).shape != shape {
                return Err(config(format!(
                    "parameter {i}: expected {name}{shape:?}, got {}{:?}",
                    tensors.name_at(i),
                    tensors.at(i).shape
                )));
            }
        }
        Ok(Self { tensors })
    }

    pub fn at(&self, i: usize) -> &Tensor {
        self.tensors.at(i)
    }

    pub fn body(&self, k: usize) -> &Tensor {
        self.tensors.at(BODY_OFFSET + k)
    }

    /// Copy of the loop-body tensors only.
    pub fn body_tensors(&self) -> NamedTensors {
        body_subset(&self.tensors)
    }

    pub fn num_params(&self) -> usize {
        self.tensors.num_values()
    }

    pub fn num_body_params(&self) -> usize {
        (0..16).map(|k| self.body(k).len()).sum()
    }

    /// Order-sensitive hash of every value, used to tie traces to parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.tensors.iter() {
            for v in &t.data {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// The 16 body tensors of a full parameter-shaped collection.
pub fn body_subset(all: &NamedTensors) -> NamedTensors {
    (BODY_OFFSET..LNF_G)
        .map(|i| (all.name_at(i).to_string(), all.at(i).clone()))
        .collect()
}
