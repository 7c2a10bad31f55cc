//! Model and training configuration.

use crate::data::Granularity;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Bucket count for each of the four coordinate embedding tables on the
    /// [0, 1000] grid.
    pub coord_buckets: usize,
    /// Capacity of the positional table; documents longer than this are
    /// rejected when positional embeddings are enabled.
    pub max_tokens: usize,
    /// Sequence-index embeddings on/off.
    pub positional: bool,
    /// Vocabulary frequency threshold.
    pub vocab_min_count: usize,
    /// When false, word embeddings stay at their random initialization so
    /// token identity survives classification training intact.
    pub train_word_embeddings: bool,
    pub embed_init_std: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            dim: 128,
            layers: 4,
            heads: 4,
            ffn_dim: 512,
            coord_buckets: 64,
            max_tokens: 512,
            positional: true,
            vocab_min_count: 2,
            train_word_embeddings: true,
            embed_init_std: 0.3,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    /// Small configuration used throughout tests and the bundled pipelines.
    pub fn desk(seed: u64) -> Self {
        SurrogateConfig {
            dim: 32,
            layers: 2,
            heads: 2,
            ffn_dim: 64,
            coord_buckets: 128,
            max_tokens: 64,
            positional: false,
            train_word_embeddings: false,
            embed_init_std: 0.15,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.coord_buckets == 0 {
            return Err(Error::Config("coord_buckets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Linear learning-rate decay: the last epoch runs at `lr * final_lr_frac`.
    pub final_lr_frac: f64,
    /// Maximum absolute per-token translation jitter (grid units) applied
    /// while training, hardening the classifier against small box scatter.
    pub coord_jitter: f64,
    pub weight_decay: f64,
    pub batch_docs: usize,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        SurrogateTrainConfig {
            epochs: 30,
            lr: 2e-4,
            final_lr_frac: 1.0,
            coord_jitter: 0.0,
            weight_decay: 0.01,
            batch_docs: 8,
            holdout_frac: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    /// Embedding dimensionality of the paired surrogate.
    pub in_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub granularity: Granularity,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            in_dim: 128,
            model_dim: 64,
            layers: 4,
            heads: 2,
            ffn_dim: 128,
            granularity: Granularity::Line,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn desk(in_dim: usize, granularity: Granularity, seed: u64) -> Self {
        PredictorConfig {
            in_dim,
            model_dim: 48,
            layers: 4,
            heads: 4,
            ffn_dim: 96,
            granularity,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.model_dim == 0 || self.layers == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(
                "predictor dimensions must be positive".into(),
            ));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorTrainConfig {
    pub lambda_giou: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Linear learning-rate decay: the last epoch runs at `lr * final_lr_frac`.
    pub final_lr_frac: f64,
    /// Per-epoch weight averaging (Polyak-style): the tracked model is
    /// `decay * avg + (1 - decay) * current`, and the returned predictor
    /// carries the averaged weights. Zero disables averaging.
    pub ema_decay: f64,
    pub weight_decay: f64,
    pub batch_docs: usize,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig {
            lambda_giou: 2.0,
            epochs: 30,
            lr: 1e-3,
            final_lr_frac: 0.1,
            ema_decay: 0.9,
            weight_decay: 0.01,
            batch_docs: 8,
            holdout_frac: 0.2,
            seed: 0,
        }
    }
}

impl PredictorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_giou < 0.0 {
            return Err(Error::Config(format!(
                "lambda_giou must be non-negative, got {}",
                self.lambda_giou
            )));
        }
        Ok(())
    }
}
