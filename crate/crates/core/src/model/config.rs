use alloc::format;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of LSTM layers in the prediction network.
pub const DECODER_LAYERS: usize = 2;

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// Pyramidal LSTM layers `n_p`; total subsampling is `2^{n_p}`.
    pub pyramid_layers: usize,
    /// Plain LSTM layers stacked after the pyramid.
    pub lstm_layers: usize,
    /// Encoder width `d`.
    pub encoder_dim: usize,
    /// Prediction network width (also its embedding size).
    pub decoder_dim: usize,
    /// Attention heads `n_att`, shared by encoder and joint attention.
    pub heads: usize,
    /// Self-attention context `τ` in encoder frames on each side.
    pub context: usize,
    /// Joint attention chunk width `w` in encoder frames.
    pub chunk_width: usize,
    /// Output units `|Y|`, excluding blank.
    pub vocab_size: usize,
    pub blank: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 80,
            pyramid_layers: 3,
            lstm_layers: 2,
            encoder_dim: 64,
            decoder_dim: 64,
            heads: 4,
            context: 2,
            chunk_width: 4,
            vocab_size: 16,
            blank: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if self.feature_dim == 0 || self.encoder_dim == 0 || self.decoder_dim == 0 {
            return fail(format!(
                "feature_dim, encoder_dim and decoder_dim must be positive (got {}, {}, {})",
                self.feature_dim, self.encoder_dim, self.decoder_dim
            ));
        }
        if self.pyramid_layers > 16 {
            return fail(format!("pyramid_layers = {} is unreasonably deep", self.pyramid_layers));
        }
        if self.lstm_layers == 0 {
            return fail("at least one LSTM layer must follow the pyramid".into());
        }
        if self.heads == 0 || !self.encoder_dim.is_multiple_of(self.heads) {
            return fail(format!("encoder_dim {} not divisible by heads {}", self.encoder_dim, self.heads));
        }
        if self.encoder_dim < 2 {
            return fail("encoder_dim must be at least 2 for layer normalization".into());
        }
        if self.chunk_width == 0 {
            return fail("chunk_width must be at least 1".into());
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be at least 1".into());
        }
        if self.blank != 0 {
            return fail(format!("blank index must be 0, got {}", self.blank));
        }
        Ok(())
    }

    /// Total subsampling factor `μ = 2^{n_p}`.
    pub fn subsampling(&self) -> usize {
        1 << self.pyramid_layers
    }

    /// Output classes `|Y| + 1`.
    pub fn classes(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn head_dim(&self) -> usize {
        self.encoder_dim / self.heads
    }

    pub fn encoder_len(&self, frames: usize) -> usize {
        crate::loss::subsampled_length(frames, self.pyramid_layers as u32)
    }

    /// Number of joint chunks `C` for `frames` input frames.
    pub fn chunks_for(&self, frames: usize) -> usize {
        self.encoder_len(frames).div_ceil(self.chunk_width)
    }
}
