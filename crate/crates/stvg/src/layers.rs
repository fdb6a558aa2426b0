//! Shared neural building blocks: parameter registry, linear layers,
//! attention with projections, feed-forward, and the post-norm transformer
//! encoder layer used by the text backbone and the slow branch.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tapegrad::{multi_head_attention, AttnMask, Tape, Tensor};

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    Normal(f64),
    Zeros,
    Ones,
}

/// Owns the tape and the named parameter registry. Parameters are created in
/// a fixed order from a seeded generator, so a config + seed pair fully
/// determines the initial weights.
pub struct ParamSet {
    tape: Rc<Tape>,
    entries: Vec<(String, Tensor)>,
    rng: ChaCha8Rng,
}

impl ParamSet {
    pub fn new(seed: u64) -> ParamSet {
        ParamSet { tape: Tape::new(), entries: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn tape(&self) -> &Rc<Tape> {
        &self.tape
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-a..a)).collect()
            }
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let u1: f64 = self.rng.gen_range(1e-12..1.0);
                    let u2: f64 = self.rng.gen_range(0.0..1.0);
                    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        let t = self.tape.param(shape, data);
        assert!(
            !self.entries.iter().any(|(n, _)| n == name),
            "duplicate parameter name `{name}`"
        );
        self.entries.push((name.to_string(), t.clone()));
        t
    }

    /// Freeze the registry; must be called once, after the last parameter.
    pub fn finish(&self) {
        self.tape.mark_persistent();
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Dropout context: training carries the step RNG, evaluation is a no-op.
pub enum Phase<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Phase<'_> {
    pub fn dropout(&mut self, x: &Tensor, p: f64) -> Tensor {
        match self {
            Phase::Train(rng) if p > 0.0 => {
                let mut sample = || rng.gen::<f64>();
                x.dropout(p, &mut sample)
            }
            _ => x.clone(),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        Linear {
            w: ps.add(&format!("{name}.weight"), &[out_dim, in_dim], Init::Xavier { fan_in: in_dim, fan_out: out_dim }),
            b: ps.add(&format!("{name}.bias"), &[out_dim], Init::Zeros),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.linear(&self.w, &self.b)
    }
}

pub struct LayerNorm {
    gain: Tensor,
    shift: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gain: ps.add(&format!("{name}.gain"), &[d], Init::Ones),
            shift: ps.add(&format!("{name}.shift"), &[d], Init::Zeros),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.layer_norm(&self.gain, &self.shift)
    }
}

/// Q/K/V/O projections around scaled dot-product attention.
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, heads: usize) -> Attention {
        Attention {
            q: Linear::new(ps, &format!("{name}.q"), d, d),
            k: Linear::new(ps, &format!("{name}.k"), d, d),
            v: Linear::new(ps, &format!("{name}.v"), d, d),
            o: Linear::new(ps, &format!("{name}.o"), d, d),
            heads,
        }
    }

    /// Returns the projected output and the post-softmax attention weights
    /// with shape [heads, Lq, Lk].
    pub fn forward(&self, queries: &Tensor, keys_values: &Tensor, mask: &Rc<AttnMask>) -> (Tensor, Tensor) {
        let q = self.q.forward(queries);
        let k = self.k.forward(keys_values);
        let v = self.v.forward(keys_values);
        let (out, weights) = multi_head_attention(&q, &k, &v, mask, self.heads);
        (self.o.forward(&out), weights)
    }
}

pub struct FeedForward {
    lin1: Linear,
    lin2: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, hidden: usize) -> FeedForward {
        FeedForward {
            lin1: Linear::new(ps, &format!("{name}.lin1"), d, hidden),
            lin2: Linear::new(ps, &format!("{name}.lin2"), hidden, d),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.lin2.forward(&self.lin1.forward(x).relu())
    }
}

/// Post-norm residual encoder layer: self-attention then feed-forward.
pub struct EncoderLayer {
    attn: Attention,
    ff: FeedForward,
    ln_attn: LayerNorm,
    ln_ff: LayerNorm,
    dropout: f64,
}

impl EncoderLayer {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, heads: usize, ffn: usize, dropout: f64) -> EncoderLayer {
        EncoderLayer {
            attn: Attention::new(ps, &format!("{name}.attn"), d, heads),
            ff: FeedForward::new(ps, &format!("{name}.ffn"), d, ffn),
            ln_attn: LayerNorm::new(ps, &format!("{name}.ln_attn"), d),
            ln_ff: LayerNorm::new(ps, &format!("{name}.ln_ffn"), d),
            dropout,
        }
    }

    pub fn forward(&self, x: &Tensor, mask: &Rc<AttnMask>, phase: &mut Phase) -> Tensor {
        let (attended, _) = self.attn.forward(x, x, mask);
        let x = self.ln_attn.forward(&x.add(&phase.dropout(&attended, self.dropout)));
        let ff = self.ff.forward(&x);
        self.ln_ff.forward(&x.add(&phase.dropout(&ff, self.dropout)))
    }
}

/// 1-D sinusoidal position table: row t holds interleaved
/// sin(t / 10000^(2i/d)), cos(t / 10000^(2i/d)).
pub fn sinusoidal_table(positions: usize, d: usize) -> Vec<f64> {
    assert!(d.is_multiple_of(2), "sinusoidal encoding needs an even dim, got {d}");
    let mut table = vec![0.0; positions * d];
    for t in 0..positions {
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            table[t * d + 2 * i] = (t as f64 * freq).sin();
            table[t * d + 2 * i + 1] = (t as f64 * freq).cos();
        }
    }
    table
}
