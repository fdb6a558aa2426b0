//! Space-time decoder: T time queries refined by blocks of temporal
//! self-attention, time-aligned cross-attention over the fused video-text
//! features, and feed-forward layers, post-norm residual style.
//!
//! Each time query may only cross-attend to its own frame's HW+L tokens
//! (block-diagonal mask), so with the time encoding and the temporal
//! self-attention both disabled the decoder treats every frame
//! independently.

use std::rc::Rc;

use tapegrad::{AttnMask, Tensor};

use crate::config::DecoderAblation;
use crate::encoder::EncoderOutput;
use crate::layers::{sinusoidal_table, Attention, FeedForward, Init, LayerNorm, ParamSet, Phase};

#[derive(Clone, Copy, Debug)]
pub struct DecoderSettings {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub ablation: DecoderAblation,
}

/// Refined queries and recorded attention, one entry per decoder block.
pub struct DecoderOutput {
    /// `[T, d]` refined queries after each block.
    pub q_layers: Vec<Tensor>,
    /// Temporal self-attention weights per block, `[heads, T, T]`; empty
    /// when self-attention is ablated.
    pub self_attn: Vec<Tensor>,
    /// Cross-attention weights per block, `[heads, T, T*(HW+L)]`.
    pub cross_attn: Vec<Tensor>,
}

/// Block-diagonal mask: query row t may attend exactly to the HW+L columns
/// of frame t.
pub fn build_cross_attention_mask(t: usize, hw: usize, l: usize) -> AttnMask {
    let span = hw + l;
    AttnMask::from_fn(t, t * span, move |row, col| col / span == row)
}

struct DecoderBlock {
    self_attn: Attention,
    cross_attn: Attention,
    ff: FeedForward,
    ln_self: LayerNorm,
    ln_cross: LayerNorm,
    ln_ff: LayerNorm,
}

pub struct SpaceTimeDecoder {
    settings: DecoderSettings,
    object_encoding: Tensor,
    blocks: Vec<DecoderBlock>,
}

impl SpaceTimeDecoder {
    pub fn new(ps: &mut ParamSet, s: DecoderSettings) -> SpaceTimeDecoder {
        let object_encoding = ps.add("decoder.object_encoding", &[1, s.d], Init::Normal(0.02));
        let blocks = (0..s.layers)
            .map(|i| {
                let name = format!("decoder.{i}");
                DecoderBlock {
                    self_attn: Attention::new(ps, &format!("{name}.self_attn"), s.d, s.heads),
                    cross_attn: Attention::new(ps, &format!("{name}.cross_attn"), s.d, s.heads),
                    ff: FeedForward::new(ps, &format!("{name}.ffn"), s.d, s.ffn_dim),
                    ln_self: LayerNorm::new(ps, &format!("{name}.ln_self"), s.d),
                    ln_cross: LayerNorm::new(ps, &format!("{name}.ln_cross"), s.d),
                    ln_ff: LayerNorm::new(ps, &format!("{name}.ln_ffn"), s.d),
                }
            })
            .collect();
        SpaceTimeDecoder { settings: s, object_encoding, blocks }
    }

    /// Initial time queries: the learned object encoding shared by all
    /// frames, plus a frozen sinusoidal time encoding unless ablated.
    pub fn build_time_queries(&self, t: usize) -> Tensor {
        let d = self.settings.d;
        assert!(d.is_multiple_of(2), "time encoding needs an even model dim, got {d}");
        let shared = self.object_encoding.broadcast_rows(t);
        if !self.settings.ablation.use_time_encoding {
            return shared;
        }
        let pe = self.object_encoding.tape().constant(&[t, d], sinusoidal_table(t, d));
        shared.add(&pe)
    }

    pub fn forward(&self, enc: &EncoderOutput, phase: &mut Phase) -> DecoderOutput {
        let t = enc.t;
        let d = self.settings.d;
        let p = self.settings.dropout;
        assert_eq!(enc.f.rows(), t * enc.tokens_per_frame(), "encoder output rows do not match T");
        assert_eq!(enc.f.cols(), d, "encoder dim {} vs decoder dim {}", enc.f.cols(), d);

        let self_mask = Rc::new(AttnMask::all_allowed(t, t));
        let cross_mask = Rc::new(build_cross_attention_mask(t, enc.hw, enc.l));

        let mut q = self.build_time_queries(t);
        let mut out = DecoderOutput { q_layers: Vec::new(), self_attn: Vec::new(), cross_attn: Vec::new() };
        for block in &self.blocks {
            if self.settings.ablation.use_temporal_self_attention {
                let (sa, weights) = block.self_attn.forward(&q, &q, &self_mask);
                out.self_attn.push(weights);
                q = block.ln_self.forward(&q.add(&phase.dropout(&sa, p)));
            }
            let (ca, weights) = block.cross_attn.forward(&q, &enc.f, &cross_mask);
            out.cross_attn.push(weights);
            q = block.ln_cross.forward(&q.add(&phase.dropout(&ca, p)));
            let ff = block.ff.forward(&q);
            q = block.ln_ff.forward(&q.add(&phase.dropout(&ff, p)));
            out.q_layers.push(q.clone());
        }
        out
    }

    pub fn settings(&self) -> &DecoderSettings {
        &self.settings
    }
}
