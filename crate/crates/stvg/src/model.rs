//! Full grounding model: backbones, slow-fast encoder, space-time decoder,
//! and prediction heads over one shared parameter tape.

use tapegrad::Tensor;

use crate::backbone::{TextBackbone, VisualBackbone};
use crate::config::{DecoderAblation, RunConfig};
use crate::data::VideoTensor;
use crate::decoder::{DecoderSettings, SpaceTimeDecoder};
use crate::encoder::{EncoderSettings, VideoTextEncoder};
use crate::error::Result;
use crate::heads::{PredictionHeads, TubePredictionTensors};
use crate::layers::{ParamSet, Phase};
use crate::metrics::TubePrediction;

/// Architecture settings, decoupled from the training-run fields of
/// [`RunConfig`].
#[derive(Clone, Debug)]
pub struct ModelSettings {
    pub d: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub head_dropout: f64,
    pub patch: usize,
    pub channels: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub k: usize,
    pub fast_enabled: bool,
    pub aggregation: crate::config::Aggregation,
    pub ablation: DecoderAblation,
}

impl ModelSettings {
    pub fn from_run_config(cfg: &RunConfig, vocab_size: usize) -> ModelSettings {
        ModelSettings {
            d: cfg.d,
            heads: cfg.heads,
            enc_layers: cfg.enc_layers,
            dec_layers: cfg.dec_layers,
            ffn_dim: cfg.ffn_dim,
            dropout: cfg.dropout,
            head_dropout: cfg.head_dropout,
            patch: cfg.patch_size,
            channels: 3,
            vocab_size,
            max_text_len: cfg.max_text_len,
            k: cfg.k,
            fast_enabled: cfg.fast_enabled,
            aggregation: cfg.aggregation,
            ablation: cfg.ablation(),
        }
    }
}

/// Differentiable outputs of one forward pass.
pub struct ForwardOutput {
    /// Per decoder layer, the head predictions on that layer's queries.
    pub layers: Vec<TubePredictionTensors>,
    /// Temporal self-attention per layer, `[heads, T, T]` (empty if ablated).
    pub self_attn: Vec<Tensor>,
    /// Cross-attention per layer, `[heads, T, T*(HW+L)]`.
    pub cross_attn: Vec<Tensor>,
    pub t: usize,
    pub hw: usize,
    pub l: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl ForwardOutput {
    pub fn final_prediction(&self) -> TubePrediction {
        let last = self.layers.last().expect("decoder produced no layers");
        let boxes = last
            .boxes
            .data()
            .chunks_exact(4)
            .map(|b| [b[0], b[1], b[2], b[3]])
            .collect();
        TubePrediction { boxes, tau_s: last.tau_s.data(), tau_e: last.tau_e.data() }
    }
}

pub struct GroundingModel {
    settings: ModelSettings,
    params: ParamSet,
    visual: VisualBackbone,
    text: TextBackbone,
    encoder: VideoTextEncoder,
    decoder: SpaceTimeDecoder,
    heads: PredictionHeads,
}

impl GroundingModel {
    pub fn new(settings: ModelSettings, seed: u64) -> GroundingModel {
        let s = &settings;
        assert!(s.d.is_multiple_of(s.heads) && s.d.is_multiple_of(4), "model dim {} incompatible with heads/PE", s.d);
        let mut ps = ParamSet::new(seed);
        let visual = VisualBackbone::new(&mut ps, s.d, s.patch, s.channels);
        let text =
            TextBackbone::new(&mut ps, s.d, s.heads, s.ffn_dim, s.vocab_size, s.max_text_len, s.dropout);
        let encoder = VideoTextEncoder::new(
            &mut ps,
            EncoderSettings {
                d: s.d,
                heads: s.heads,
                layers: s.enc_layers,
                ffn_dim: s.ffn_dim,
                dropout: s.dropout,
                k: s.k,
                fast_enabled: s.fast_enabled,
                aggregation: s.aggregation,
                max_text_len: s.max_text_len,
            },
        );
        let decoder = SpaceTimeDecoder::new(
            &mut ps,
            DecoderSettings {
                d: s.d,
                heads: s.heads,
                layers: s.dec_layers,
                ffn_dim: s.ffn_dim,
                dropout: s.dropout,
                ablation: s.ablation,
            },
        );
        let heads = PredictionHeads::new(&mut ps, s.d, s.head_dropout);
        ps.finish();
        GroundingModel { settings, params: ps, visual, text, encoder, decoder, heads }
    }

    pub fn settings(&self) -> &ModelSettings {
        &self.settings
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn tape(&self) -> &std::rc::Rc<tapegrad::Tape> {
        self.params.tape()
    }

    pub fn encoder(&self) -> &VideoTextEncoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &SpaceTimeDecoder {
        &self.decoder
    }

    pub fn visual_backbone(&self) -> &VisualBackbone {
        &self.visual
    }

    pub fn text_backbone(&self) -> &TextBackbone {
        &self.text
    }

    pub fn forward(&self, video: &VideoTensor, token_ids: &[usize], phase: &mut Phase) -> Result<ForwardOutput> {
        let x0 = self.visual.forward(video)?;
        let y0 = self.text.forward(token_ids, phase)?;
        let enc = self.encoder.forward(&x0, &y0, phase);
        let dec = self.decoder.forward(&enc, phase);
        let layers = dec.q_layers.iter().map(|q| self.heads.predict(q, phase)).collect();
        Ok(ForwardOutput {
            layers,
            self_attn: dec.self_attn,
            cross_attn: dec.cross_attn,
            t: enc.t,
            hw: enc.hw,
            l: enc.l,
            grid_h: x0.h,
            grid_w: x0.w,
        })
    }

    /// Evaluation-mode forward returning the final-layer prediction; the
    /// activation tape is cleared afterwards.
    pub fn predict(&self, video: &VideoTensor, token_ids: &[usize]) -> Result<TubePrediction> {
        let out = self.forward(video, token_ids, &mut Phase::Eval)?;
        let pred = out.final_prediction();
        self.tape().reset();
        Ok(pred)
    }
}
