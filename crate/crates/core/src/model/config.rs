use serde::{Deserialize, Serialize};

use crate::engine::ops::{conv_output_len, pool_output_len};
use crate::error::{Error, Result};
use crate::image::{IMAGE_FEATURE_DIM, IMAGE_SIDE};
use crate::text::TEXT_FEATURE_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Full text + image network.
    Ticnn,
    /// Logistic regression over the explicit text vector.
    LogisticText,
}

/// Hyperparameters of the network. Serialized field names are the JSON keys
/// stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub embed_dim: usize,
    pub text_filters: usize,
    pub text_filter_h: usize,
    pub text_pool: usize,
    pub conv_channels: usize,
    pub conv_layers: usize,
    pub image_size: usize,
    pub image_filter: (usize, usize),
    pub image_pool: (usize, usize),
    pub hidden_dim: usize,
    /// Keep probabilities `(a, b)`: `a` after the embedding, `b` elsewhere.
    pub dropout_pair: (f64, f64),
    pub classes: usize,
    pub text_explicit_dim: usize,
    pub image_explicit_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Ticnn,
            vocab_size: 20_000,
            seq_len: 1000,
            embed_dim: 100,
            text_filters: 10,
            text_filter_h: 3,
            text_pool: 2,
            conv_channels: 32,
            conv_layers: 3,
            image_size: IMAGE_SIDE,
            image_filter: (3, 3),
            image_pool: (2, 2),
            hidden_dim: 128,
            dropout_pair: (0.5, 0.8),
            classes: 2,
            text_explicit_dim: TEXT_FEATURE_DIM,
            image_explicit_dim: IMAGE_FEATURE_DIM,
        }
    }
}

impl ModelConfig {
    pub fn logistic_text() -> Self {
        ModelConfig {
            arch: Arch::LogisticText,
            ..Default::default()
        }
    }

    /// Spatial side lengths through the image-latent stack, starting with
    /// the input: conv `s - f + 1`, then pool `floor(s / p)`, per layer.
    pub fn image_trace(&self) -> Result<Vec<usize>> {
        let mut trace = vec![self.image_size];
        let mut s = (self.image_size, self.image_size);
        for layer in 1..=self.conv_layers {
            let conv = (conv_output_len(s.0, self.image_filter.0), conv_output_len(s.1, self.image_filter.1));
            s = match conv {
                (Some(h), Some(w)) => (h, w),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "image conv layer {layer}: input {}x{} is smaller than the {}x{} filter (valid convolution output = input - filter + 1 must be >= 1)",
                        s.0, s.1, self.image_filter.0, self.image_filter.1
                    )))
                }
            };
            trace.push(s.0);
            let pool = (pool_output_len(s.0, self.image_pool.0), pool_output_len(s.1, self.image_pool.1));
            s = match pool {
                (Some(h), Some(w)) => (h, w),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "image pool layer {layer}: input {}x{} gives an empty output with pool {}x{} (output = floor(input / pool) must be >= 1)",
                        s.0, s.1, self.image_pool.0, self.image_pool.1
                    )))
                }
            };
            trace.push(s.0);
        }
        Ok(trace)
    }

    /// `(feature-map length, pooled length)` of the text-latent stack.
    pub fn text_trace(&self) -> Result<(usize, usize)> {
        let len = conv_output_len(self.seq_len, self.text_filter_h).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "text conv: sequence length {} is shorter than filter height {} (feature-map length n - h + 1 must be >= 1)",
                self.seq_len, self.text_filter_h
            ))
        })?;
        let pooled = pool_output_len(len, self.text_pool).ok_or_else(|| {
            Error::InvalidConfig(format!("text pool: feature map of length {len} is shorter than pool {}", self.text_pool))
        })?;
        Ok((len, pooled))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
            ("embed_dim", self.embed_dim),
            ("text_filters", self.text_filters),
            ("text_filter_h", self.text_filter_h),
            ("text_pool", self.text_pool),
            ("conv_channels", self.conv_channels),
            ("image_size", self.image_size),
            ("image_filter height", self.image_filter.0),
            ("image_filter width", self.image_filter.1),
            ("image_pool height", self.image_pool.0),
            ("image_pool width", self.image_pool.1),
            ("hidden_dim", self.hidden_dim),
            ("text_explicit_dim", self.text_explicit_dim),
            ("image_explicit_dim", self.image_explicit_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!("classes must be >= 2, got {}", self.classes)));
        }
        for (name, p) in [("dropout_pair.0", self.dropout_pair.0), ("dropout_pair.1", self.dropout_pair.1)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} is a keep probability and must lie in (0, 1), got {p}")));
            }
        }
        if self.vocab_size < 3 {
            return Err(Error::InvalidConfig("vocab_size must be >= 3 (padding, unknown and one token)".into()));
        }
        if self.arch == Arch::Ticnn {
            self.text_trace()?;
            self.image_trace()?;
        }
        Ok(())
    }
}
