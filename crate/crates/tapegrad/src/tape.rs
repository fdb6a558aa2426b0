//! The gradient tape: value arena, operation record, and the backward pass.
//!
//! Execution model: a [`Tape`] owns every tensor value produced during a
//! step. Parameters are allocated first and pinned with
//! [`Tape::mark_persistent`]; activations recorded after that point are
//! discarded by [`Tape::reset`] between steps while parameters (and their
//! gradient buffers) survive. The backward pass walks the operation record
//! in exact reverse execution order and accumulates into gradient buffers,
//! so repeated calls without [`Tape::zero_grad`] accumulate.
//!
//! Everything is single-threaded `f64`; values are immutable once produced
//! within a step. Shape violations and non-finite values are hard errors
//! (panics) surfaced at op boundaries.

use std::cell::RefCell;
use std::rc::Rc;

use crate::kernels::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
use crate::mask::AttnMask;
use crate::tensor::Tensor;

pub(crate) struct Value {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    /// Lazily allocated on the first backward pass that reaches this value.
    pub grad: Option<Vec<f64>>,
}

impl Value {
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// One recorded differentiable operation. Fields are value ids plus whatever
/// the backward rule needs that is cheaper to save than recompute.
pub(crate) enum Op {
    Linear { x: usize, w: usize, b: usize, out: usize, m: usize, in_dim: usize, out_dim: usize },
    MatmulNN { a: usize, b: usize, out: usize, m: usize, k: usize, n: usize },
    MatmulNT { a: usize, b: usize, out: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Div { a: usize, b: usize, out: usize },
    Scale { a: usize, out: usize, c: f64 },
    AddScalar { a: usize, out: usize },
    Minimum { a: usize, b: usize, out: usize },
    Maximum { a: usize, b: usize, out: usize },
    Relu { a: usize, out: usize },
    Sigmoid { a: usize, out: usize },
    Abs { a: usize, out: usize },
    LogClamped { a: usize, out: usize },
    SoftmaxMasked { out: usize, logits: usize, mask: Rc<AttnMask> },
    LayerNorm {
        x: usize,
        gain: usize,
        shift: usize,
        out: usize,
        rows: usize,
        dim: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SumAll { a: usize, out: usize },
    MeanRows { a: usize, out: usize, rows: usize, cols: usize },
    BroadcastRows { a: usize, out: usize, rows: usize, cols: usize },
    ConcatRows { parts: Vec<usize>, out: usize, cols: usize },
    ConcatCols { parts: Vec<usize>, out: usize, rows: usize },
    Narrow { a: usize, out: usize, a_cols: usize, row0: usize, col0: usize, rows: usize, cols: usize },
    SelectRows { a: usize, out: usize, indices: Rc<Vec<usize>>, cols: usize },
    Embedding { table: usize, out: usize, ids: Rc<Vec<usize>>, dim: usize },
    Reshape { a: usize, out: usize },
    Dropout { a: usize, out: usize, mask: Rc<Vec<f64>> },
}

pub(crate) struct TapeInner {
    pub values: Vec<Value>,
    pub ops: Vec<Op>,
    persistent: usize,
}

/// Records differentiable operations and replays them in reverse.
pub struct Tape {
    pub(crate) inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new_unshared()
    }
}

pub(crate) fn assert_finite(op: &str, data: &[f64]) {
    if !data.iter().all(|v| v.is_finite()) {
        panic!("{op}: produced a non-finite value (NaN or Inf)");
    }
}

impl Tape {
    fn new_unshared() -> Tape {
        Tape { inner: RefCell::new(TapeInner { values: Vec::new(), ops: Vec::new(), persistent: 0 }) }
    }

    pub fn new() -> Rc<Tape> {
        Rc::new(Tape::new_unshared())
    }

    pub(crate) fn push_value(
        self: &Rc<Self>,
        op: &str,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
    ) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "{op}: shape {shape:?} does not match buffer of {} values", data.len());
        assert_finite(op, &data);
        let mut inner = self.inner.borrow_mut();
        let id = inner.values.len();
        inner.values.push(Value { shape: shape.clone(), data, requires_grad, grad: None });
        Tensor::from_parts(Rc::clone(self), id, shape)
    }

    pub(crate) fn record(&self, op: Op) {
        self.inner.borrow_mut().ops.push(op);
    }

    /// A trainable parameter. Must be created before `mark_persistent`.
    pub fn param(self: &Rc<Self>, shape: &[usize], data: Vec<f64>) -> Tensor {
        self.push_value("param", shape.to_vec(), data, true)
    }

    /// A constant input: participates in forward math, never receives grads.
    pub fn constant(self: &Rc<Self>, shape: &[usize], data: Vec<f64>) -> Tensor {
        self.push_value("constant", shape.to_vec(), data, false)
    }

    pub fn scalar(self: &Rc<Self>, v: f64) -> Tensor {
        self.constant(&[1], vec![v])
    }

    /// Pin everything allocated so far (parameters) across `reset` calls.
    pub fn mark_persistent(&self) {
        let mut inner = self.inner.borrow_mut();
        assert!(inner.ops.is_empty(), "mark_persistent: tape already holds recorded operations");
        inner.persistent = inner.values.len();
    }

    /// Drop all activations and recorded operations, keeping persistent
    /// values (parameters and their gradient buffers) intact.
    pub fn reset(&self) {
        let mut inner = self.inner.borrow_mut();
        let persistent = inner.persistent;
        inner.values.truncate(persistent);
        inner.ops.clear();
    }

    /// Zero every gradient buffer on the tape.
    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        for v in inner.values.iter_mut() {
            if let Some(g) = v.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn num_ops(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    pub fn num_values(&self) -> usize {
        self.inner.borrow().values.len()
    }

    /// Reverse sweep from a scalar loss. Every `requires_grad` value reachable
    /// from `loss` accumulates d(loss)/d(value) into its grad buffer.
    ///
    /// Each call computes one full gradient in scratch buffers and then folds
    /// it into the persistent buffers, so repeated calls without `zero_grad`
    /// add whole gradients rather than compounding through intermediates.
    pub fn backward(&self, loss: &Tensor) {
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        {
            let lv = &inner.values[loss.id()];
            assert_eq!(lv.data.len(), 1, "backward: loss must be a scalar, got shape {:?}", lv.shape);
            assert!(!inner.ops.is_empty(), "backward: tape holds no recorded operations");
            assert!(lv.requires_grad(), "backward: loss does not require grad");
        }
        let mut sweep: Vec<Option<Vec<f64>>> = vec![None; inner.values.len()];
        sweep[loss.id()] = Some(vec![1.0]);
        for op in inner.ops.iter().rev() {
            step_backward(&inner.values, &mut sweep, op);
        }
        for (v, s) in inner.values.iter_mut().zip(sweep) {
            if let Some(s) = s {
                if v.requires_grad {
                    let g = v.grad.get_or_insert_with(|| vec![0.0; v.data.len()]);
                    axpy(g, 1.0, &s);
                }
            }
        }
    }
}

type Sweep = Vec<Option<Vec<f64>>>;

/// Gradient of an op output within the current sweep; `None` when the output
/// does not lead to the loss (its op can be skipped). Taken by move: ops run
/// in reverse execution order, so by the time a value's producing op is
/// visited every consumer has already read this slot.
fn grad_of(sweep: &mut Sweep, id: usize) -> Option<Vec<f64>> {
    sweep[id].take()
}

fn wants_grad(values: &[Value], id: usize) -> bool {
    values[id].requires_grad()
}

fn accumulate(values: &[Value], sweep: &mut Sweep, id: usize, contrib: &[f64]) {
    let slot = sweep[id].get_or_insert_with(|| vec![0.0; values[id].data.len()]);
    axpy(slot, 1.0, contrib);
}

fn step_backward(values: &[Value], sweep: &mut Sweep, op: &Op) {
    match op {
        Op::Linear { x, w, b, out, m, in_dim, out_dim } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *x) {
                let mut dx = vec![0.0; m * in_dim];
                gemm_nn(&mut dx, &dy, &values[*w].data, *m, *out_dim, *in_dim);
                accumulate(values, sweep, *x, &dx);
            }
            if wants_grad(values, *w) {
                let mut dw = vec![0.0; out_dim * in_dim];
                gemm_tn(&mut dw, &dy, &values[*x].data, *out_dim, *m, *in_dim);
                accumulate(values, sweep, *w, &dw);
            }
            if wants_grad(values, *b) {
                let mut db = vec![0.0; *out_dim];
                for r in 0..*m {
                    axpy(&mut db, 1.0, &dy[r * out_dim..(r + 1) * out_dim]);
                }
                accumulate(values, sweep, *b, &db);
            }
        }
        Op::MatmulNN { a, b, out, m, k, n } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let mut da = vec![0.0; m * k];
                gemm_nt(&mut da, &dy, &values[*b].data, *m, *n, *k);
                accumulate(values, sweep, *a, &da);
            }
            if wants_grad(values, *b) {
                let mut db = vec![0.0; k * n];
                gemm_tn(&mut db, &values[*a].data, &dy, *k, *m, *n);
                accumulate(values, sweep, *b, &db);
            }
        }
        Op::MatmulNT { a, b, out, m, k, n } => {
            // out[m,n] = a[m,k] * b[n,k]^T
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let mut da = vec![0.0; m * k];
                gemm_nn(&mut da, &dy, &values[*b].data, *m, *n, *k);
                accumulate(values, sweep, *a, &da);
            }
            if wants_grad(values, *b) {
                let mut db = vec![0.0; n * k];
                gemm_tn(&mut db, &dy, &values[*a].data, *n, *m, *k);
                accumulate(values, sweep, *b, &db);
            }
        }
        Op::Add { a, b, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                accumulate(values, sweep, *a, &dy);
            }
            if wants_grad(values, *b) {
                accumulate(values, sweep, *b, &dy);
            }
        }
        Op::Sub { a, b, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                accumulate(values, sweep, *a, &dy);
            }
            if wants_grad(values, *b) {
                let neg: Vec<f64> = dy.iter().map(|v| -v).collect();
                accumulate(values, sweep, *b, &neg);
            }
        }
        Op::Mul { a, b, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let contrib: Vec<f64> =
                    dy.iter().zip(&values[*b].data).map(|(d, bv)| d * bv).collect();
                accumulate(values, sweep, *a, &contrib);
            }
            if wants_grad(values, *b) {
                let contrib: Vec<f64> =
                    dy.iter().zip(&values[*a].data).map(|(d, av)| d * av).collect();
                accumulate(values, sweep, *b, &contrib);
            }
        }
        Op::Div { a, b, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let contrib: Vec<f64> =
                    dy.iter().zip(&values[*b].data).map(|(d, bv)| d / bv).collect();
                accumulate(values, sweep, *a, &contrib);
            }
            if wants_grad(values, *b) {
                let contrib: Vec<f64> = dy
                    .iter()
                    .zip(values[*out].data.iter().zip(&values[*b].data))
                    .map(|(d, (ov, bv))| -d * ov / bv)
                    .collect();
                accumulate(values, sweep, *b, &contrib);
            }
        }
        Op::Scale { a, out, c } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let contrib: Vec<f64> = dy.iter().map(|d| d * c).collect();
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::AddScalar { a, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                accumulate(values, sweep, *a, &dy);
            }
        }
        Op::Minimum { a, b, out } | Op::Maximum { a, b, out } => {
            // Route grads to the winning side; ties go to `a`.
            let take_min = matches!(op, Op::Minimum { .. });
            let Some(dy) = grad_of(sweep, *out) else { return };
            let pick_a: Vec<bool> = values[*a]
                .data
                .iter()
                .zip(&values[*b].data)
                .map(|(av, bv)| if take_min { av <= bv } else { av >= bv })
                .collect();
            if wants_grad(values, *a) {
                let contrib: Vec<f64> = dy
                    .iter()
                    .zip(&pick_a)
                    .map(|(d, &pa)| if pa { *d } else { 0.0 })
                    .collect();
                accumulate(values, sweep, *a, &contrib);
            }
            if wants_grad(values, *b) {
                let contrib: Vec<f64> = dy
                    .iter()
                    .zip(&pick_a)
                    .map(|(d, &pa)| if pa { 0.0 } else { *d })
                    .collect();
                accumulate(values, sweep, *b, &contrib);
            }
        }
        Op::Relu { a, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let contrib: Vec<f64> = dy
                    .iter()
                    .zip(&values[*a].data)
                    .map(|(d, av)| if *av > 0.0 { *d } else { 0.0 })
                    .collect();
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::Sigmoid { a, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let contrib: Vec<f64> = dy
                    .iter()
                    .zip(&values[*out].data)
                    .map(|(d, y)| d * y * (1.0 - y))
                    .collect();
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::Abs { a, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let contrib: Vec<f64> = dy
                    .iter()
                    .zip(&values[*a].data)
                    .map(|(d, av)| {
                        if *av > 0.0 {
                            *d
                        } else if *av < 0.0 {
                            -*d
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::LogClamped { a, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let contrib: Vec<f64> = dy
                    .iter()
                    .zip(&values[*a].data)
                    .map(|(d, av)| if *av >= crate::LOG_CLAMP { d / av } else { 0.0 })
                    .collect();
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::SoftmaxMasked { out, logits, mask } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *logits) {
                let cols = mask.cols();
                let rows = dy.len() / cols;
                let y = &values[*out].data;
                let mut contrib = vec![0.0; dy.len()];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let dr = &dy[r * cols..(r + 1) * cols];
                    let s = dot(yr, dr);
                    let cr = &mut contrib[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        cr[c] = yr[c] * (dr[c] - s);
                    }
                }
                accumulate(values, sweep, *logits, &contrib);
            }
        }
        Op::LayerNorm { x, gain, shift, out, rows, dim, mean, inv_std } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            let d = *dim;
            let xd = &values[*x].data;
            let gd = &values[*gain].data;
            let mut dx = vec![0.0; xd.len()];
            let mut dgain = vec![0.0; d];
            let mut dshift = vec![0.0; d];
            for r in 0..*rows {
                let xr = &xd[r * d..(r + 1) * d];
                let dr = &dy[r * d..(r + 1) * d];
                let mu = mean[r];
                let inv = inv_std[r];
                // dxhat, plus the two row-level reductions of the norm rule
                let mut sum_dxhat = 0.0;
                let mut sum_dxhat_xhat = 0.0;
                for c in 0..d {
                    let xhat = (xr[c] - mu) * inv;
                    let dxhat = dr[c] * gd[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    dgain[c] += dr[c] * xhat;
                    dshift[c] += dr[c];
                }
                let dxr = &mut dx[r * d..(r + 1) * d];
                let dn = d as f64;
                for c in 0..d {
                    let xhat = (xr[c] - mu) * inv;
                    let dxhat = dr[c] * gd[c];
                    dxr[c] = inv * (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn);
                }
            }
            if wants_grad(values, *x) {
                accumulate(values, sweep, *x, &dx);
            }
            if wants_grad(values, *gain) {
                accumulate(values, sweep, *gain, &dgain);
            }
            if wants_grad(values, *shift) {
                accumulate(values, sweep, *shift, &dshift);
            }
        }
        Op::SumAll { a, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            let dy = dy[0];
            if wants_grad(values, *a) {
                let contrib = vec![dy; values[*a].data.len()];
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::MeanRows { a, out, rows, cols } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let scale = 1.0 / *rows as f64;
                let mut contrib = vec![0.0; rows * cols];
                for r in 0..*rows {
                    axpy(&mut contrib[r * cols..(r + 1) * cols], scale, &dy);
                }
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::BroadcastRows { a, out, rows, cols } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let mut contrib = vec![0.0; *cols];
                for r in 0..*rows {
                    axpy(&mut contrib, 1.0, &dy[r * cols..(r + 1) * cols]);
                }
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::ConcatRows { parts, out, cols } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            let mut row0 = 0usize;
            for &p in parts {
                let rows = values[p].data.len() / cols;
                if wants_grad(values, p) {
                    let contrib = dy[row0 * cols..(row0 + rows) * cols].to_vec();
                    accumulate(values, sweep, p, &contrib);
                }
                row0 += rows;
            }
        }
        Op::ConcatCols { parts, out, rows } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            let out_cols = dy.len() / rows;
            let mut col0 = 0usize;
            for &p in parts {
                let cols = values[p].data.len() / rows;
                if wants_grad(values, p) {
                    let mut contrib = vec![0.0; rows * cols];
                    for r in 0..*rows {
                        contrib[r * cols..(r + 1) * cols]
                            .copy_from_slice(&dy[r * out_cols + col0..r * out_cols + col0 + cols]);
                    }
                    accumulate(values, sweep, p, &contrib);
                }
                col0 += cols;
            }
        }
        Op::Narrow { a, out, a_cols, row0, col0, rows, cols } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let mut contrib = vec![0.0; values[*a].data.len()];
                for r in 0..*rows {
                    let dst = (row0 + r) * a_cols + col0;
                    axpy(&mut contrib[dst..dst + cols], 1.0, &dy[r * cols..(r + 1) * cols]);
                }
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::SelectRows { a, out, indices, cols } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let mut contrib = vec![0.0; values[*a].data.len()];
                for (r, &src) in indices.iter().enumerate() {
                    axpy(&mut contrib[src * cols..(src + 1) * cols], 1.0, &dy[r * cols..(r + 1) * cols]);
                }
                accumulate(values, sweep, *a, &contrib);
            }
        }
        Op::Embedding { table, out, ids, dim } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *table) {
                let mut contrib = vec![0.0; values[*table].data.len()];
                for (r, &id) in ids.iter().enumerate() {
                    axpy(&mut contrib[id * dim..(id + 1) * dim], 1.0, &dy[r * dim..(r + 1) * dim]);
                }
                accumulate(values, sweep, *table, &contrib);
            }
        }
        Op::Reshape { a, out } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                accumulate(values, sweep, *a, &dy);
            }
        }
        Op::Dropout { a, out, mask } => {
            let Some(dy) = grad_of(sweep, *out) else { return };
            if wants_grad(values, *a) {
                let contrib: Vec<f64> = dy.iter().zip(mask.iter()).map(|(d, m)| d * m).collect();
                accumulate(values, sweep, *a, &contrib);
            }
        }
    }
}
