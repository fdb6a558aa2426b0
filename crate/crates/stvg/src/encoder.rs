//! Slow-fast video-text encoder.
//!
//! The slow branch samples the first frame of every clip of `k` consecutive
//! frames, concatenates the sampled visual tokens with the text tokens, and
//! runs the joint transformer per clip. The fast branch is a lightweight
//! per-frame path over all frames (no attention in its default form) that
//! does not back-propagate into the visual backbone. Aggregation replicates
//! each clip's slow output `k` times (truncated to `T`), fuses the visual
//! part with the fast features through `g`, and re-attaches the clip's text
//! tokens, yielding per-frame fused features `F`.

use std::rc::Rc;

use tapegrad::{concat_rows, AttnMask, Tensor};

use crate::backbone::{FrameFeatures, TextFeatures};
use crate::config::Aggregation;
use crate::layers::{EncoderLayer, Init, Linear, ParamSet, Phase};

#[derive(Clone, Copy, Debug)]
pub struct EncoderSettings {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub k: usize,
    pub fast_enabled: bool,
    pub aggregation: Aggregation,
    pub max_text_len: usize,
}

/// Per-frame fused video-text features: `[T*(HW+L), d]` with token order
/// [visual tokens, text tokens] inside every frame block.
pub struct EncoderOutput {
    pub f: Tensor,
    pub t: usize,
    pub hw: usize,
    pub l: usize,
}

impl EncoderOutput {
    pub fn tokens_per_frame(&self) -> usize {
        self.hw + self.l
    }

    /// The visual block of frame `t`: `[HW, d]`.
    pub fn visual_block(&self, t: usize) -> Tensor {
        self.f.narrow(t * self.tokens_per_frame(), self.hw, 0, self.f.cols())
    }
}

/// Number of clips for a video of `t` frames at stride `k`.
pub fn clip_count(t: usize, k: usize) -> usize {
    t.div_ceil(k)
}

/// Row indices of the frames the slow branch samples: the first frame of
/// each clip.
pub fn sampled_frames(t: usize, k: usize) -> Vec<usize> {
    (0..clip_count(t, k)).map(|m| m * k).collect()
}

pub struct VideoTextEncoder {
    settings: EncoderSettings,
    text_pos: Tensor,
    layers: Vec<EncoderLayer>,
    fast: Option<FastBranch>,
    agg_linear: Option<Linear>,
}

struct FastBranch {
    linear: Linear,
    temporal: Option<EncoderLayer>,
    variant: Aggregation,
}

impl VideoTextEncoder {
    pub fn new(ps: &mut ParamSet, s: EncoderSettings) -> VideoTextEncoder {
        let text_pos = ps.add("encoder.text_pos", &[s.max_text_len, s.d], Init::Normal(0.02));
        let layers = (0..s.layers)
            .map(|i| EncoderLayer::new(ps, &format!("encoder.slow.{i}"), s.d, s.heads, s.ffn_dim, s.dropout))
            .collect();
        let fast = if s.fast_enabled {
            let temporal = match s.aggregation {
                Aggregation::FastTransformer => Some(EncoderLayer::new(
                    ps,
                    "encoder.fast.temporal",
                    s.d,
                    s.heads,
                    s.ffn_dim,
                    s.dropout,
                )),
                _ => None,
            };
            Some(FastBranch {
                linear: Linear::new(ps, "encoder.fast.linear", s.d, s.d),
                temporal,
                variant: s.aggregation,
            })
        } else {
            None
        };
        let agg_linear = if s.fast_enabled && !matches!(s.aggregation, Aggregation::GatedProduct) {
            Some(Linear::new(ps, "encoder.agg.linear", s.d, s.d))
        } else {
            None
        };
        VideoTextEncoder { settings: s, text_pos, layers, fast, agg_linear }
    }

    /// Select the slow branch's frames: clip m contributes frame m*k.
    pub fn temporal_subsample(&self, x0: &FrameFeatures) -> Tensor {
        let hw = x0.hw();
        let mut rows = Vec::new();
        for frame in sampled_frames(x0.t, self.settings.k) {
            rows.extend(frame * hw..(frame + 1) * hw);
        }
        x0.feats.select_rows(&Rc::new(rows))
    }

    /// Run the joint visual-text transformer independently per clip.
    /// Learned text position encodings are added once, before layer 0.
    pub fn slow_encode(&self, sampled: &Tensor, y0: &TextFeatures, hw: usize, phase: &mut Phase) -> Vec<Tensor> {
        let d = self.settings.d;
        let l = y0.len;
        let m = sampled.rows() / hw;
        let text = y0.feats.add(&self.text_pos.narrow(0, l, 0, d));
        let mask = Rc::new(AttnMask::all_allowed(hw + l, hw + l));
        (0..m)
            .map(|clip| {
                let visual = sampled.narrow(clip * hw, hw, 0, d);
                let mut tokens = concat_rows(&[visual, text.clone()]);
                for layer in &self.layers {
                    tokens = layer.forward(&tokens, &mask, phase);
                }
                tokens
            })
            .collect()
    }

    /// The per-frame fast path over all frames. The input is detached: this
    /// branch never back-propagates into the visual backbone.
    pub fn fast_branch(&self, x0: &FrameFeatures, phase: &mut Phase) -> Tensor {
        let fast = self
            .fast
            .as_ref()
            .expect("fast_branch called with fast_enabled = false");
        let x = x0.feats.detach();
        let (t, hw, d) = (x0.t, x0.hw(), self.settings.d);
        match fast.variant {
            Aggregation::SumLinear | Aggregation::GatedProduct => fast.linear.forward(&x),
            Aggregation::SpatialPooled => {
                // Mean over the spatial grid per frame, then linear, then
                // broadcast back over the grid.
                let pooled: Vec<Tensor> =
                    (0..t).map(|f| x.narrow(f * hw, hw, 0, d).mean_rows()).collect();
                let pooled = fast.linear.forward(&concat_rows(&pooled));
                let frames: Vec<Tensor> =
                    (0..t).map(|f| pooled.narrow(f, 1, 0, d).broadcast_rows(hw)).collect();
                concat_rows(&frames)
            }
            Aggregation::FastTransformer => {
                // Temporal attention per spatial position: each of the HW
                // token tracks attends over its own T frames.
                let x = fast.linear.forward(&x);
                let layer = fast.temporal.as_ref().expect("fast transformer layer missing");
                let mask = Rc::new(AttnMask::all_allowed(t, t));
                let tracks: Vec<Tensor> = (0..hw)
                    .map(|pos| {
                        let rows: Vec<usize> = (0..t).map(|f| f * hw + pos).collect();
                        layer.forward(&x.select_rows(&Rc::new(rows)), &mask, phase)
                    })
                    .collect();
                // Scatter the [T] rows of each track back to frame-major order.
                let stacked = concat_rows(&tracks); // [HW*T, d], position-major
                let back: Vec<usize> =
                    (0..t * hw).map(|i| (i % hw) * t + i / hw).collect();
                stacked.select_rows(&Rc::new(back))
            }
        }
    }

    /// Replicate slow clips over time (truncated to T), fuse with the fast
    /// features, and reattach each clip's text tokens.
    pub fn aggregate(&self, slow: &[Tensor], fast: Option<&Tensor>, t: usize, hw: usize, l: usize) -> EncoderOutput {
        let d = self.settings.d;
        let k = self.settings.k;
        // Stride 1 keeps the fast and aggregation modules inert: the fused
        // features are exactly the slow features.
        let inert = k == 1 || fast.is_none();
        let split: Vec<(Tensor, Tensor)> = slow
            .iter()
            .map(|clip| (clip.narrow(0, hw, 0, d), clip.narrow(hw, l, 0, d)))
            .collect();
        let mut frames = Vec::with_capacity(t);
        for frame in 0..t {
            let clip = frame / k;
            if inert {
                frames.push(slow[clip].clone());
                continue;
            }
            let (h_v, h_s) = &split[clip];
            let f_t = fast.unwrap().narrow(frame * hw, hw, 0, d);
            let fused = match self.settings.aggregation {
                Aggregation::GatedProduct => h_v.mul(&f_t).sigmoid(),
                _ => self
                    .agg_linear
                    .as_ref()
                    .expect("aggregation linear missing")
                    .forward(&h_v.add(&f_t)),
            };
            frames.push(concat_rows(&[fused.add(h_v), h_s.clone()]));
        }
        EncoderOutput { f: concat_rows(&frames), t, hw, l }
    }

    /// Full encoder: subsample, slow encode, fast branch, aggregate.
    pub fn forward(&self, x0: &FrameFeatures, y0: &TextFeatures, phase: &mut Phase) -> EncoderOutput {
        let sampled = self.temporal_subsample(x0);
        let slow = self.slow_encode(&sampled, y0, x0.hw(), phase);
        let fast = if self.settings.k > 1 && self.fast.is_some() {
            Some(self.fast_branch(x0, phase))
        } else {
            None
        };
        self.aggregate(&slow, fast.as_ref(), x0.t, x0.hw(), y0.len)
    }

    pub fn settings(&self) -> &EncoderSettings {
        &self.settings
    }
}
