//! The four-term training objective: L1 + generalized IoU on the boxes over
//! the annotated segment, KL divergence against quantized-Gaussian start/end
//! targets, and a guided attention penalty pulling temporal self-attention
//! mass inside the ground-truth interval. All four are applied to every
//! decoder layer's predictions and summed.

use tapegrad::Tensor;

use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::heads::TubePredictionTensors;

/// Discrete unit-variance Gaussian over `t` frames, centered on a frame and
/// normalized to sum to one.
pub fn build_target_distribution(center: usize, t: usize) -> Result<Vec<f64>> {
    if center >= t {
        return Err(Error::Data(format!("target center {center} outside 0..{t}")));
    }
    let mut tau: Vec<f64> = (0..t)
        .map(|i| {
            let d = i as f64 - center as f64;
            (-d * d / 2.0).exp()
        })
        .collect();
    let sum: f64 = tau.iter().sum();
    tau.iter_mut().for_each(|v| *v /= sum);
    Ok(tau)
}

/// Supervision for one sample: the annotated interval, its per-frame boxes,
/// and the derived start/end target distributions.
#[derive(Clone, Debug)]
pub struct GroundTruthTube {
    pub t_start: usize,
    pub t_end: usize,
    /// One (cx, cy, w, h) box per frame of the interval, inclusive.
    pub boxes: Vec<[f64; 4]>,
    pub tau_s: Vec<f64>,
    pub tau_e: Vec<f64>,
    pub t_total: usize,
}

impl GroundTruthTube {
    pub fn new(t_start: usize, t_end: usize, boxes: Vec<[f64; 4]>, t_total: usize) -> Result<GroundTruthTube> {
        if t_start > t_end || t_end >= t_total {
            return Err(Error::Data(format!(
                "invalid interval [{t_start}, {t_end}] for a video of {t_total} frames"
            )));
        }
        if boxes.len() != t_end - t_start + 1 {
            return Err(Error::Data(format!(
                "{} boxes for an interval of {} frames",
                boxes.len(),
                t_end - t_start + 1
            )));
        }
        for (i, b) in boxes.iter().enumerate() {
            if b[2] <= 0.0 || b[3] <= 0.0 {
                return Err(Error::Data(format!(
                    "degenerate ground-truth box at frame {}: w={}, h={}",
                    t_start + i,
                    b[2],
                    b[3]
                )));
            }
        }
        Ok(GroundTruthTube {
            t_start,
            t_end,
            boxes,
            tau_s: build_target_distribution(t_start, t_total)?,
            tau_e: build_target_distribution(t_end, t_total)?,
            t_total,
        })
    }

    pub fn span_len(&self) -> usize {
        self.t_end - self.t_start + 1
    }
}

/// Split `[n, 4]` center-form boxes into corner-form column vectors
/// (x1, y1, x2, y2), each `[n, 1]`.
fn center_to_corners(boxes: &Tensor) -> (Tensor, Tensor, Tensor, Tensor) {
    let n = boxes.rows();
    let cx = boxes.narrow(0, n, 0, 1);
    let cy = boxes.narrow(0, n, 1, 1);
    let half_w = boxes.narrow(0, n, 2, 1).scale(0.5);
    let half_h = boxes.narrow(0, n, 3, 1).scale(0.5);
    (cx.sub(&half_w), cy.sub(&half_h), cx.add(&half_w), cy.add(&half_h))
}

/// L1 and gIoU losses, averaged over the annotated frames only. The
/// prediction covers all T frames; frames outside [t_start, t_end] cannot
/// influence either loss.
pub fn spatial_losses(pred_boxes: &Tensor, gt: &GroundTruthTube) -> (Tensor, Tensor) {
    assert_eq!(pred_boxes.cols(), 4, "boxes must be [T, 4], got {:?}", pred_boxes.shape());
    assert_eq!(
        pred_boxes.rows(),
        gt.t_total,
        "predicted {} frames vs annotation over {}",
        pred_boxes.rows(),
        gt.t_total
    );
    let n = gt.span_len();
    let tape = pred_boxes.tape().clone();
    let pred = pred_boxes.narrow(gt.t_start, n, 0, 4);
    let gt_tensor = tape.constant(&[n, 4], gt.boxes.iter().flatten().copied().collect());

    let l1 = pred.sub(&gt_tensor).abs().sum_all().scale(1.0 / n as f64);

    let (px1, py1, px2, py2) = center_to_corners(&pred);
    let (gx1, gy1, gx2, gy2) = center_to_corners(&gt_tensor);

    let inter_w = px2.minimum(&gx2).sub(&px1.maximum(&gx1)).relu();
    let inter_h = py2.minimum(&gy2).sub(&py1.maximum(&gy1)).relu();
    let inter = inter_w.mul(&inter_h);
    let area_p = px2.sub(&px1).mul(&py2.sub(&py1));
    let area_g = gx2.sub(&gx1).mul(&gy2.sub(&gy1));
    let union = area_p.add(&area_g).sub(&inter);
    let iou = inter.div(&union);

    let hull_w = px2.maximum(&gx2).sub(&px1.minimum(&gx1));
    let hull_h = py2.maximum(&gy2).sub(&py1.minimum(&gy1));
    let hull = hull_w.mul(&hull_h);
    let giou = iou.sub(&hull.sub(&union).div(&hull));

    // mean over frames of (1 - gIoU)
    let giou_loss = giou.sum_all().scale(-1.0 / n as f64).add_scalar(1.0);
    (l1, giou_loss)
}

fn kl_to_target(target: &[f64], predicted: &Tensor) -> Tensor {
    let tape = predicted.tape().clone();
    let t = tape.constant(&[1, target.len()], target.to_vec());
    // KL(target || predicted) = sum t ln t - sum t ln q ; the entropy term is
    // a constant, folded in so a perfect match gives exactly zero.
    let entropy: f64 =
        target.iter().map(|&p| if p > 0.0 { p * p.max(tapegrad::LOG_CLAMP).ln() } else { 0.0 }).sum();
    t.mul(&predicted.log_clamped()).sum_all().neg().add_scalar(entropy)
}

fn check_normalized(name: &str, dist: &Tensor) {
    let sum: f64 = dist.data().iter().sum();
    assert!(
        (sum - 1.0).abs() <= 1e-6,
        "temporal_losses: {name} is not normalized (row sum {sum})"
    );
}

/// KL loss on the start/end distributions plus the guided attention loss.
///
/// The guided term is `-(1/T) * sum_rows log(in-segment mass + 1e-12)` of the
/// head-averaged self-attention matrix, summed over the supplied layers.
/// Passing no attention matrices (self-attention ablated) leaves the term at
/// zero.
pub fn temporal_losses(
    tau_s: &Tensor,
    tau_e: &Tensor,
    gt: &GroundTruthTube,
    attention_layers: &[Tensor],
) -> (Tensor, Tensor) {
    check_normalized("predicted start distribution", tau_s);
    check_normalized("predicted end distribution", tau_e);
    let kl = kl_to_target(&gt.tau_s, tau_s).add(&kl_to_target(&gt.tau_e, tau_e));

    let tape = tau_s.tape().clone();
    let mut att = tape.scalar(0.0);
    for a in attention_layers {
        att = att.add(&guided_attention_term(a, gt));
    }
    (kl, att)
}

fn guided_attention_term(attention: &Tensor, gt: &GroundTruthTube) -> Tensor {
    let shape = attention.shape().to_vec();
    assert_eq!(shape.len(), 3, "self-attention weights must be [heads, T, T], got {shape:?}");
    let (heads, t) = (shape[0], shape[1]);
    assert_eq!(shape[2], t, "self-attention weights must be square over time, got {shape:?}");
    assert_eq!(t, gt.t_total, "attention over {t} frames vs annotation over {}", gt.t_total);

    let flat = attention.reshape(&[heads * t, t]);
    let mut mean = flat.narrow(0, t, 0, t);
    for h in 1..heads {
        mean = mean.add(&flat.narrow(h * t, t, 0, t));
    }
    mean = mean.scale(1.0 / heads as f64);

    let seg = mean.narrow(0, t, gt.t_start, gt.span_len());
    let ones = attention.tape().constant(&[gt.span_len(), 1], vec![1.0; gt.span_len()]);
    let in_mass = seg.matmul(&ones); // [T, 1] in-segment mass per query row
    in_mass.add_scalar(1e-12).log_clamped().sum_all().scale(-1.0 / t as f64)
}

/// Per-layer losses combined with the scalar weights and summed over layers.
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub giou: f64,
    pub kl: f64,
    pub att: f64,
}

/// Weighted sum of the four losses, applied at every decoder layer.
///
/// `attention_layers` must be empty (self-attention ablated) or hold exactly
/// one matrix per prediction layer.
pub fn total_loss(
    predictions: &[TubePredictionTensors],
    attention_layers: &[Tensor],
    gt: &GroundTruthTube,
    w: &LossWeights,
) -> Result<(Tensor, LossBreakdown)> {
    if predictions.is_empty() {
        return Err(Error::Data("total_loss needs at least one decoder layer".into()));
    }
    if !attention_layers.is_empty() && attention_layers.len() != predictions.len() {
        return Err(Error::Data(format!(
            "{} attention matrices for {} prediction layers",
            attention_layers.len(),
            predictions.len()
        )));
    }
    let tape = predictions[0].boxes.tape().clone();
    let mut total = tape.scalar(0.0);
    let mut breakdown = LossBreakdown { total: 0.0, l1: 0.0, giou: 0.0, kl: 0.0, att: 0.0 };
    for (i, pred) in predictions.iter().enumerate() {
        let (l1, giou) = spatial_losses(&pred.boxes, gt);
        let att_slice = if attention_layers.is_empty() {
            &[]
        } else {
            std::slice::from_ref(&attention_layers[i])
        };
        let (kl, att) = temporal_losses(&pred.tau_s, &pred.tau_e, gt, att_slice);
        breakdown.l1 += l1.item();
        breakdown.giou += giou.item();
        breakdown.kl += kl.item();
        breakdown.att += att.item();
        let layer = l1
            .scale(w.l1)
            .add(&giou.scale(w.giou))
            .add(&kl.scale(w.kl))
            .add(&att.scale(w.att));
        total = total.add(&layer);
    }
    breakdown.total = total.item();
    Ok((total, breakdown))
}
