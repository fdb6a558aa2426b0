//! Toy stand-ins for the visual backbone and the text encoder: a linear
//! patch embedding over the frame grid and a one-layer transformer over
//! learned token embeddings. Both only need to produce informative
//! per-frame and per-token features; everything interesting happens
//! downstream.

use std::rc::Rc;

use tapegrad::{embedding, AttnMask, Tensor};

use crate::data::VideoTensor;
use crate::error::{Error, Result};
use crate::layers::{sinusoidal_table, EncoderLayer, Init, Linear, ParamSet, Phase};

/// Per-frame visual tokens: a `[T*HW, d]` tensor over the flattened patch
/// grid, plus the grid geometry.
#[derive(Debug)]
pub struct FrameFeatures {
    pub feats: Tensor,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl FrameFeatures {
    pub fn hw(&self) -> usize {
        self.h * self.w
    }
}

/// Text tokens: `[L, d]`.
#[derive(Debug)]
pub struct TextFeatures {
    pub feats: Tensor,
    pub len: usize,
}

pub struct VisualBackbone {
    proj: Linear,
    patch: usize,
    channels: usize,
    d: usize,
}

impl VisualBackbone {
    pub fn new(ps: &mut ParamSet, d: usize, patch: usize, channels: usize) -> VisualBackbone {
        let in_dim = patch * patch * channels;
        VisualBackbone {
            proj: Linear::new(ps, "backbone.visual.patch_embed", in_dim, d),
            patch,
            channels,
            d,
        }
    }

    /// Flatten non-overlapping PxP patches (channel-major within a patch)
    /// and project each one to the model dim. No positional encoding yet.
    pub fn embed_patches(&self, video: &VideoTensor) -> Result<FrameFeatures> {
        let p = self.patch;
        if !video.h.is_multiple_of(p) || !video.w.is_multiple_of(p) {
            return Err(Error::Data(format!(
                "frame size {}x{} is not divisible by patch size {p}",
                video.h, video.w
            )));
        }
        if video.c != self.channels {
            return Err(Error::Data(format!(
                "video has {} channels, backbone expects {}",
                video.c, self.channels
            )));
        }
        let (gh, gw) = (video.h / p, video.w / p);
        let hw = gh * gw;
        let in_dim = p * p * self.channels;
        let mut patches = Vec::with_capacity(video.t * hw * in_dim);
        for t in 0..video.t {
            for gy in 0..gh {
                for gx in 0..gw {
                    for c in 0..video.c {
                        for py in 0..p {
                            for px in 0..p {
                                patches.push(video.at(t, c, gy * p + py, gx * p + px) as f64);
                            }
                        }
                    }
                }
            }
        }
        let tape = self.proj.w.tape();
        let x = tape.constant(&[video.t * hw, in_dim], patches);
        Ok(FrameFeatures { feats: self.proj.forward(&x), t: video.t, h: gh, w: gw })
    }

    /// Patch embedding plus the fixed 2-D sinusoidal grid encoding
    /// (per-axis tables of d/2, concatenated y-then-x).
    pub fn forward(&self, video: &VideoTensor) -> Result<FrameFeatures> {
        let f = self.embed_patches(video)?;
        let pe = grid_positional_encoding(f.t, f.h, f.w, self.d);
        let pe = f.feats.tape().constant(&[f.t * f.hw(), self.d], pe);
        Ok(FrameFeatures { feats: f.feats.add(&pe), ..f })
    }
}

/// 2-D sinusoidal encoding for a `h x w` grid, tiled over `t` frames.
pub fn grid_positional_encoding(t: usize, h: usize, w: usize, d: usize) -> Vec<f64> {
    assert!(d.is_multiple_of(4), "2-D sinusoidal encoding needs d divisible by 4, got {d}");
    let half = d / 2;
    let ytab = sinusoidal_table(h, half);
    let xtab = sinusoidal_table(w, half);
    let mut frame = Vec::with_capacity(h * w * d);
    for y in 0..h {
        for x in 0..w {
            frame.extend_from_slice(&ytab[y * half..(y + 1) * half]);
            frame.extend_from_slice(&xtab[x * half..(x + 1) * half]);
        }
    }
    let mut full = Vec::with_capacity(t * frame.len());
    for _ in 0..t {
        full.extend_from_slice(&frame);
    }
    full
}

pub struct TextBackbone {
    embed: Tensor,
    pos: Tensor,
    layer: EncoderLayer,
    max_len: usize,
}

impl TextBackbone {
    pub fn new(
        ps: &mut ParamSet,
        d: usize,
        heads: usize,
        ffn: usize,
        vocab_size: usize,
        max_len: usize,
        dropout: f64,
    ) -> TextBackbone {
        TextBackbone {
            embed: ps.add("backbone.text.embed", &[vocab_size, d], Init::Normal(0.02)),
            pos: ps.add("backbone.text.pos", &[max_len, d], Init::Normal(0.02)),
            layer: EncoderLayer::new(ps, "backbone.text.layer0", d, heads, ffn, dropout),
            max_len,
        }
    }

    pub fn forward(&self, ids: &[usize], phase: &mut Phase) -> Result<TextFeatures> {
        if ids.is_empty() {
            return Err(Error::Data("empty token sequence".into()));
        }
        if ids.len() > self.max_len {
            return Err(Error::Data(format!(
                "query of {} tokens exceeds the configured maximum {}",
                ids.len(),
                self.max_len
            )));
        }
        let l = ids.len();
        let tok = embedding(&self.embed, ids);
        let pos = self.pos.narrow(0, l, 0, self.pos.cols());
        let x = tok.add(&pos);
        let mask = Rc::new(AttnMask::all_allowed(l, l));
        Ok(TextFeatures { feats: self.layer.forward(&x, &mask, phase), len: l })
    }
}
