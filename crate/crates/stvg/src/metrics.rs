//! Tube decoding and the evaluation metric suite: vIoU, m_vIoU, vIoU@R,
//! m_tIoU, m_sIoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::GroundTruthTube;

/// Final per-frame predictions of one sample, as plain data.
#[derive(Clone, Debug)]
pub struct TubePrediction {
    /// `T` boxes (cx, cy, w, h) in [0, 1].
    pub boxes: Vec<[f64; 4]>,
    pub tau_s: Vec<f64>,
    pub tau_e: Vec<f64>,
}

/// A decoded tube: chosen start/end frames plus the boxes between them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecodedTube {
    pub t_start: usize,
    pub t_end: usize,
    pub boxes: Vec<[f64; 4]>,
}

/// Pick (t_s, t_e) maximizing tau_s[i] * tau_e[j] over pairs with j > i.
/// Ties break toward the smallest i, then the smallest j. Runs one forward
/// scan keeping the best start seen so far.
pub fn decode_tube(pred: &TubePrediction) -> Result<DecodedTube> {
    let t = pred.tau_s.len();
    if t < 2 || pred.tau_e.len() != t {
        return Err(Error::Data(format!(
            "tube decoding needs at least two frames with matching distributions, got {} and {}",
            t,
            pred.tau_e.len()
        )));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    let mut best_start = 0usize; // smallest argmax of tau_s over [0, j)
    for j in 1..t {
        if pred.tau_s[j - 1] > pred.tau_s[best_start] {
            best_start = j - 1;
        }
        let score = pred.tau_s[best_start] * pred.tau_e[j];
        if best.is_none_or(|(b, _, _)| score > b) {
            best = Some((score, best_start, j));
        }
    }
    let (_, s, e) = best.unwrap();
    Ok(DecodedTube { t_start: s, t_end: e, boxes: pred.boxes[s..=e].to_vec() })
}

/// IoU of two (cx, cy, w, h) boxes.
pub fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let corners = |v: &[f64; 4]| [v[0] - v[2] / 2.0, v[1] - v[3] / 2.0, v[0] + v[2] / 2.0, v[1] + v[3] / 2.0];
    let (ca, cb) = (corners(a), corners(b));
    let iw = (ca[2].min(cb[2]) - ca[0].max(cb[0])).max(0.0);
    let ih = (ca[3].min(cb[3]) - ca[1].max(cb[1])).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn span_overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if hi >= lo {
        hi - lo + 1
    } else {
        0
    }
}

/// vIoU = (1/|S_u|) * sum over S_i of per-frame IoU, with S_i and S_u the
/// intersection and union of the predicted and ground-truth frame sets.
pub fn viou(decoded: &DecodedTube, gt: &GroundTruthTube) -> f64 {
    let pred_span = (decoded.t_start, decoded.t_end);
    let gt_span = (gt.t_start, gt.t_end);
    let inter = span_overlap(pred_span, gt_span);
    if inter == 0 {
        return 0.0;
    }
    let union = (decoded.t_end - decoded.t_start + 1) + gt.span_len() - inter;
    let lo = pred_span.0.max(gt_span.0);
    let mut sum = 0.0;
    for t in lo..lo + inter {
        sum += box_iou(&decoded.boxes[t - decoded.t_start], &gt.boxes[t - gt.t_start]);
    }
    sum / union as f64
}

/// Temporal IoU of the inclusive frame spans.
pub fn tiou(decoded: &DecodedTube, gt: &GroundTruthTube) -> f64 {
    let inter = span_overlap((decoded.t_start, decoded.t_end), (gt.t_start, gt.t_end));
    let union = (decoded.t_end - decoded.t_start + 1) + gt.span_len() - inter;
    inter as f64 / union as f64
}

/// Spatial-only score: mean per-frame IoU over the ground-truth span,
/// using the full T-frame box track (predicted times are ignored).
pub fn siou(all_boxes: &[[f64; 4]], gt: &GroundTruthTube) -> f64 {
    let mut sum = 0.0;
    for (pred, gt_box) in all_boxes[gt.t_start..=gt.t_end].iter().zip(&gt.boxes) {
        sum += box_iou(pred, gt_box);
    }
    sum / gt.span_len() as f64
}

/// Per-sample metric triple.
#[derive(Clone, Copy, Debug)]
pub struct SampleMetrics {
    pub viou: f64,
    pub tiou: f64,
    pub siou: f64,
}

pub fn evaluate_sample(pred: &TubePrediction, gt: &GroundTruthTube) -> Result<SampleMetrics> {
    let decoded = decode_tube(pred)?;
    Ok(SampleMetrics {
        viou: viou(&decoded, gt),
        tiou: tiou(&decoded, gt),
        siou: siou(&pred.boxes, gt),
    })
}

/// Aggregate report over a dataset; all aggregates are arithmetic means,
/// and vIoU@R counts strict inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub m_viou: f64,
    pub viou_at: std::collections::BTreeMap<String, f64>,
    pub m_tiou: f64,
    pub m_siou: f64,
    pub n_samples: usize,
}

pub const VIOU_THRESHOLDS: [f64; 2] = [0.3, 0.5];

impl MetricReport {
    pub fn from_samples(samples: &[SampleMetrics]) -> MetricReport {
        let n = samples.len().max(1) as f64;
        let mut viou_at = std::collections::BTreeMap::new();
        for r in VIOU_THRESHOLDS {
            let frac = samples.iter().filter(|s| s.viou > r).count() as f64 / n;
            viou_at.insert(format!("{r}"), frac);
        }
        MetricReport {
            m_viou: samples.iter().map(|s| s.viou).sum::<f64>() / n,
            viou_at,
            m_tiou: samples.iter().map(|s| s.tiou).sum::<f64>() / n,
            m_siou: samples.iter().map(|s| s.siou).sum::<f64>() / n,
            n_samples: samples.len(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serialization cannot fail")
    }
}
