use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;
use crate::error::{Error, Result};

/// Generator architecture. Defaults are the small test profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny(1000)
    }
}

impl ModelConfig {
    /// d_model 64, 2 + 2 layers, 4 heads, ffn 256.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            ffn_dim: 256,
            max_positions: 512,
            dropout: 0.1,
            seed: 0,
        }
    }

    /// d_model 256, 4 + 4 layers, 4 heads, ffn 1024.
    pub fn base_like(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 256,
            encoder_layers: 4,
            decoder_layers: 4,
            heads: 4,
            ffn_dim: 1024,
            max_positions: 512,
            dropout: 0.1,
            seed: 0,
        }
    }

    /// 1 + 1 layers of width 8, no dropout: small enough for exhaustive
    /// finite-difference checks.
    pub fn grad_check(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            ffn_dim: 16,
            max_positions: 32,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            d_model: self.d_model,
            heads: self.heads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.vocab_size == 0 || self.ffn_dim == 0 || self.max_positions == 0 {
            return Err(Error::Config(
                "vocab_size, ffn_dim and max_positions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
