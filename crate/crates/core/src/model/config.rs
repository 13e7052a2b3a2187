use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// `h_t = F(h_{t-1} + h_0)`.
    Additive,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    /// tanh approximation.
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Maximum sequence length (rows of the positional table).
    pub seq_len: usize,
    /// Default loop horizon; examples may override it.
    pub loop_horizon: usize,
    pub injection: Injection,
    pub nonlinearity: Nonlinearity,
    /// Backpropagate only through the last `k` loop steps.
    pub truncation_k: Option<usize>,
    pub causal: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Small causal model with `d_ff = 4 d_model`.
    pub fn micro(vocab_size: usize, d_model: usize, n_heads: usize, seq_len: usize, tau: usize) -> Self {
        Self {
            vocab_size,
            d_model,
            n_heads,
            d_ff: 4 * d_model,
            seq_len,
            loop_horizon: tau,
            injection: Injection::Additive,
            nonlinearity: Nonlinearity::Gelu,
            truncation_k: None,
            causal: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.d_ff == 0 || self.seq_len == 0 {
            return Err(config("model dimensions must be positive"));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.loop_horizon == 0 {
            return Err(config("loop horizon must be at least 1"));
        }
        if let Some(k) = self.truncation_k {
            if k == 0 || k > self.loop_horizon {
                return Err(config(format!(
                    "truncation_k {k} must lie in [1, {}]",
                    self.loop_horizon
                )));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
