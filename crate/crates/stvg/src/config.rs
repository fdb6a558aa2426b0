//! Run configuration: model dimensions, ablation switches, loss weights,
//! optimization and data settings. Everything is serializable, ships with
//! desk-scale defaults, and is overridable flag-by-flag from the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slow-fast encoder variant: which fast module and aggregation pair to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Fast branch is a linear layer; g(h, f) = Linear(h + f).
    SumLinear,
    /// Fast branch is a linear layer; g(h, f) = sigmoid(h * f).
    GatedProduct,
    /// Fast branch is a small temporal transformer per spatial position;
    /// g(h, f) = Linear(h + f).
    FastTransformer,
    /// Fast branch pools over the spatial grid before its linear layer and
    /// broadcasts back; g(h, f) = Linear(h + f).
    SpatialPooled,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum_linear" => Ok(Aggregation::SumLinear),
            "gated_product" => Ok(Aggregation::GatedProduct),
            "fast_transformer" => Ok(Aggregation::FastTransformer),
            "spatial_pooled" => Ok(Aggregation::SpatialPooled),
            other => Err(Error::Config(format!("unknown aggregation variant `{other}`"))),
        }
    }
}

/// Decoder ablation switches (both on for the full model).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderAblation {
    pub use_time_encoding: bool,
    pub use_temporal_self_attention: bool,
}

impl Default for DecoderAblation {
    fn default() -> Self {
        DecoderAblation { use_time_encoding: true, use_temporal_self_attention: true }
    }
}

/// Scalar weights of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub giou: f64,
    pub kl: f64,
    pub att: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { l1: 5.0, giou: 2.0, kl: 10.0, att: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.l1 < 0.0 || self.giou < 0.0 || self.kl < 0.0 || self.att < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Full run configuration. Defaults are the desk-scale model (d=64, 2+2
/// layers, 4 heads, 32x32 canvas); the paper-scale values (T=200, N=6,
/// d=256, 8 heads, FFN 2048) remain reachable through these same fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    // model
    pub d: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub patch_size: usize,
    pub k: usize,
    pub fast_enabled: bool,
    pub aggregation: Aggregation,
    pub use_time_encoding: bool,
    pub use_temporal_self_attention: bool,
    pub max_text_len: usize,
    /// Dropout inside transformer layers (paper value 0.1).
    pub dropout: f64,
    /// Dropout before the temporal localization head (paper value 0.5).
    pub head_dropout: f64,
    /// Videos longer than this are uniformly subsampled down to it.
    pub t_max: usize,

    // loss
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub lambda_kl: f64,
    pub lambda_att: f64,

    // optimization
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_text: f64,
    pub lr_main: f64,
    /// Linear warm-up steps for the text-encoder group (0 = constant).
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub ema: bool,
    pub ema_decay: f64,
    pub augmentation: bool,
    pub seed: u64,

    // outputs
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 64,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 128,
            patch_size: 4,
            k: 2,
            fast_enabled: true,
            aggregation: Aggregation::SumLinear,
            use_time_encoding: true,
            use_temporal_self_attention: true,
            max_text_len: 8,
            dropout: 0.0,
            head_dropout: 0.0,
            t_max: 200,
            lambda_l1: 5.0,
            lambda_giou: 2.0,
            lambda_kl: 10.0,
            lambda_att: 1.0,
            epochs: 10,
            batch_size: 2,
            lr_backbone: 2e-4,
            lr_text: 1e-3,
            lr_main: 1e-3,
            warmup_steps: 0,
            weight_decay: 1e-4,
            ema: false,
            ema_decay: 0.9998,
            augmentation: false,
            seed: 0,
            out_dir: "runs/default".into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {} must be a positive multiple of {} heads",
                self.d, self.heads
            )));
        }
        if !self.d.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "model dim {} must be divisible by 4 (paired sin/cos over two spatial axes)",
                self.d
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("temporal stride k must be >= 1".into()));
        }
        if self.patch_size == 0 {
            return Err(Error::Config("patch size must be >= 1".into()));
        }
        if self.t_max < 2 {
            return Err(Error::Config(format!("t_max {} must be >= 2", self.t_max)));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::Config("dropout probabilities must lie in [0, 1)".into()));
        }
        if self.ema && !(0.0 < self.ema_decay && self.ema_decay < 1.0) {
            return Err(Error::Config(format!("EMA decay {} must lie in (0, 1)", self.ema_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        self.loss_weights().validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            l1: self.lambda_l1,
            giou: self.lambda_giou,
            kl: self.lambda_kl,
            att: self.lambda_att,
        }
    }

    pub fn ablation(&self) -> DecoderAblation {
        DecoderAblation {
            use_time_encoding: self.use_time_encoding,
            use_temporal_self_attention: self.use_temporal_self_attention,
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config file: {e}")))?;
        Ok(cfg)
    }
}
