use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the MLP input is formed inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wiring {
    /// `m = mlp(γ(a + h))` (GPT-2).
    Serial,
    /// `m = mlp(γ(h))` (GPT-J).
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    /// Tanh approximation of GELU.
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub mlp_dim: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub wiring: Wiring,
    pub nonlinearity: Nonlinearity,
    pub tie_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            hidden: 64,
            mlp_dim: 256,
            n_heads: 4,
            vocab_size: 512,
            max_context: 32,
            wiring: Wiring::Serial,
            nonlinearity: Nonlinearity::Gelu,
            tie_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub const LAYER_NORM_EPS: f64 = 1e-5;

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be >= 1".into());
        }
        if self.n_heads == 0 || self.hidden % self.n_heads != 0 {
            return fail(format!(
                "hidden ({}) must be divisible by n_heads ({})",
                self.hidden, self.n_heads
            ));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must be >= 2".into());
        }
        if self.mlp_dim == 0 || self.max_context == 0 {
            return fail("mlp_dim and max_context must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }
}
