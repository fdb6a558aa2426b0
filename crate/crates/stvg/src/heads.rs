//! Prediction heads over the refined time queries: a 3-layer MLP for the
//! per-frame boxes (logistic-squashed center/size), and 2-layer MLPs for the
//! start and end logits that become distributions over frames.

use tapegrad::Tensor;

use crate::layers::{Linear, ParamSet, Phase};

/// Differentiable per-frame predictions for one decoder layer.
pub struct TubePredictionTensors {
    /// `[T, 4]` boxes as (cx, cy, w, h), each strictly inside (0, 1).
    pub boxes: Tensor,
    /// `[1, T]` raw start/end logits.
    pub start_logits: Tensor,
    pub end_logits: Tensor,
    /// `[1, T]` softmax distributions.
    pub tau_s: Tensor,
    pub tau_e: Tensor,
}

pub struct PredictionHeads {
    box_mlp: (Linear, Linear, Linear),
    start_mlp: (Linear, Linear),
    end_mlp: (Linear, Linear),
    head_dropout: f64,
}

impl PredictionHeads {
    pub fn new(ps: &mut ParamSet, d: usize, head_dropout: f64) -> PredictionHeads {
        PredictionHeads {
            box_mlp: (
                Linear::new(ps, "heads.box.0", d, d),
                Linear::new(ps, "heads.box.1", d, d),
                Linear::new(ps, "heads.box.2", d, 4),
            ),
            start_mlp: (
                Linear::new(ps, "heads.start.0", d, d),
                Linear::new(ps, "heads.start.1", d, 1),
            ),
            end_mlp: (
                Linear::new(ps, "heads.end.0", d, d),
                Linear::new(ps, "heads.end.1", d, 1),
            ),
            head_dropout,
        }
    }

    pub fn predict(&self, q: &Tensor, phase: &mut Phase) -> TubePredictionTensors {
        let t = q.rows();
        let (b0, b1, b2) = &self.box_mlp;
        let boxes = b2.forward(&b1.forward(&b0.forward(q).relu()).relu()).sigmoid();

        // Dropout on the queries feeding the temporal localization head only.
        let q_temp = phase.dropout(q, self.head_dropout);
        let (s0, s1) = &self.start_mlp;
        let start_logits = s1.forward(&s0.forward(&q_temp).relu()).reshape(&[1, t]);
        let (e0, e1) = &self.end_mlp;
        let end_logits = e1.forward(&e0.forward(&q_temp).relu()).reshape(&[1, t]);

        TubePredictionTensors {
            boxes,
            tau_s: start_logits.softmax(),
            tau_e: end_logits.softmax(),
            start_logits,
            end_logits,
        }
    }
}
