//! Analytic complexity report: closed-form attention score-entry counts and
//! an activation-memory estimate for a given architecture shape. Quantifies
//! what the sparse slow branch and the time-aligned cross-attention save
//! over dense per-frame encoding.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub t: usize,
    pub hw: usize,
    pub l: usize,
    pub k: usize,
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub clips: usize,
    /// Slow-branch encoder self-attention score entries: N * heads * ceil(T/k) * (HW+L)^2.
    pub encoder_slow_entries: u64,
    /// Dense per-frame baseline: N * heads * T * (HW+L)^2.
    pub encoder_dense_entries: u64,
    /// encoder_slow_entries / encoder_dense_entries = ceil(T/k) / T.
    pub encoder_ratio: f64,
    /// Decoder temporal self-attention entries: N * heads * T^2.
    pub decoder_self_entries: u64,
    /// Time-aligned cross-attention entries: N * heads * T * (HW+L).
    pub decoder_cross_entries: u64,
    /// Rough activation footprint in f64 values: token features per layer
    /// plus all attention matrices.
    pub activation_floats: u64,
}

pub fn complexity_report(
    t: usize,
    hw: usize,
    l: usize,
    k: usize,
    layers: usize,
    d: usize,
    heads: usize,
) -> ComplexityReport {
    assert!(t > 0 && hw > 0 && l > 0 && k > 0 && layers > 0 && d > 0 && heads > 0);
    let clips = t.div_ceil(k);
    let tokens = (hw + l) as u64;
    let n = layers as u64;
    let h = heads as u64;

    let encoder_slow_entries = n * h * clips as u64 * tokens * tokens;
    let encoder_dense_entries = n * h * t as u64 * tokens * tokens;
    let decoder_self_entries = n * h * (t as u64) * (t as u64);
    let decoder_cross_entries = n * h * t as u64 * tokens;

    let encoder_tokens = n * clips as u64 * tokens * d as u64;
    let fast_tokens = (t * hw * d) as u64;
    let fused_tokens = (t as u64) * tokens * d as u64;
    let decoder_tokens = n * (t * d) as u64;
    let activation_floats = encoder_tokens
        + fast_tokens
        + fused_tokens
        + decoder_tokens
        + encoder_slow_entries
        + decoder_self_entries
        + decoder_cross_entries;

    ComplexityReport {
        t,
        hw,
        l,
        k,
        layers,
        d,
        heads,
        clips,
        encoder_slow_entries,
        encoder_dense_entries,
        encoder_ratio: clips as f64 / t as f64,
        decoder_self_entries,
        decoder_cross_entries,
        activation_floats,
    }
}
