//! Scaled dot-product attention over multiple heads.

use std::rc::Rc;

use crate::mask::AttnMask;
use crate::tensor::{concat_cols, concat_rows, Tensor};

/// Multi-head scaled dot-product attention (no projections).
///
/// Splits the model dim into `heads` slices, scores each head with scale
/// `1/sqrt(d/heads)`, applies the masked row-wise softmax, and re-concatenates
/// the attended values. Returns the output `[Lq, d]` and the post-softmax
/// weights with shape `[heads, Lq, Lk]` (head-major layout). Blocked positions
/// carry exactly zero weight, so values at blocked keys can never influence
/// the output.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: &Rc<AttnMask>,
    heads: usize,
) -> (Tensor, Tensor) {
    let d = q.cols();
    assert!(heads >= 1 && d.is_multiple_of(heads), "attention: model dim {d} not divisible by {heads} heads");
    assert_eq!(k.cols(), d, "attention: key dim {:?} vs query dim {d}", k.shape());
    assert_eq!(v.cols(), d, "attention: value dim {:?} vs query dim {d}", v.shape());
    assert_eq!(k.rows(), v.rows(), "attention: {} keys vs {} values", k.rows(), v.rows());
    let (lq, lk) = (q.rows(), k.rows());
    assert_eq!(mask.rows(), lq, "attention: mask rows {} vs {} queries", mask.rows(), lq);
    assert_eq!(mask.cols(), lk, "attention: mask cols {} vs {} keys", mask.cols(), lk);

    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut scores = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.narrow(0, lq, h * dh, dh);
        let kh = k.narrow(0, lk, h * dh, dh);
        scores.push(qh.matmul_nt(&kh).scale(scale));
    }
    // One softmax over all heads stacked head-major; the mask tiles per head.
    let weights = concat_rows(&scores).softmax_masked(mask);
    let mut attended = Vec::with_capacity(heads);
    for h in 0..heads {
        let wh = weights.narrow(h * lq, lq, 0, lk);
        let vh = v.narrow(0, lk, h * dh, dh);
        attended.push(wh.matmul(&vh));
    }
    let out = concat_cols(&attended);
    (out, weights.reshape(&[heads, lq, lk]))
}
