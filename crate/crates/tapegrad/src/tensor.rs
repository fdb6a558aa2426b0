//! The user-facing tensor handle and its differentiable operations.
//!
//! A [`Tensor`] is a lightweight reference into its [`Tape`]'s value arena:
//! shape metadata plus an id. Forward methods compute the result eagerly,
//! push the output value, and record the operation when any input requires
//! gradients.

use std::rc::Rc;

use crate::kernels::gemm_nn;
use crate::mask::AttnMask;
use crate::tape::{Op, Tape};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to one dense f64 value on a tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Rc<Tape>,
    id: usize,
    shape: Vec<usize>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor").field("id", &self.id).field("shape", &self.shape).finish()
    }
}

impl Tensor {
    pub(crate) fn from_parts(tape: Rc<Tape>, id: usize, shape: Vec<usize>) -> Tensor {
        Tensor { tape, id, shape }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Rc<Tape> {
        &self.tape
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Rows of the canonical 2-D view: all leading axes flattened together.
    pub fn rows(&self) -> usize {
        if self.shape.len() <= 1 {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    /// Trailing axis of the canonical 2-D view.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("cols() on a 0-d tensor")
    }

    fn check_live(&self) {
        let n = self.tape.num_values();
        assert!(self.id < n, "tensor id {} is stale (tape was reset; {} live values)", self.id, n);
    }

    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        self.check_live();
        let inner = self.tape.inner.borrow();
        f(&inner.values[self.id].data)
    }

    pub fn with_grad<R>(&self, f: impl FnOnce(Option<&[f64]>) -> R) -> R {
        self.check_live();
        let inner = self.tape.inner.borrow();
        f(inner.values[self.id].grad.as_deref())
    }

    fn requires_grad_flag(&self) -> bool {
        self.check_live();
        self.tape.inner.borrow().values[self.id].requires_grad
    }

    /// Mutate the raw value buffer in place. Only meaningful for parameters
    /// between steps (an optimizer update or a checkpoint load); values are
    /// otherwise immutable once produced.
    pub fn modify_data(&self, f: impl FnOnce(&mut [f64])) {
        self.check_live();
        let mut inner = self.tape.inner.borrow_mut();
        f(&mut inner.values[self.id].data);
        crate::tape::assert_finite("modify_data", &inner.values[self.id].data);
    }

    pub fn modify_grad(&self, f: impl FnOnce(&mut [f64])) {
        self.check_live();
        let mut inner = self.tape.inner.borrow_mut();
        let v = &mut inner.values[self.id];
        assert!(v.requires_grad, "modify_grad on non-grad tensor");
        let n = v.data.len();
        f(v.grad.get_or_insert_with(|| vec![0.0; n]));
    }

    pub fn data(&self) -> Vec<f64> {
        self.with_data(|d| d.to_vec())
    }

    /// Accumulated gradient; all zeros before the first backward pass.
    pub fn grad(&self) -> Option<Vec<f64>> {
        if !self.requires_grad_flag() {
            return None;
        }
        Some(self.with_grad(|g| g.map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; self.numel()])))
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad_flag()
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.with_data(|d| d[0])
    }

    /// Stop-gradient: same data, detached from the graph.
    pub fn detach(&self) -> Tensor {
        let data = self.data();
        self.tape.push_value("detach", self.shape.clone(), data, false)
    }

    fn binary_elementwise(
        &self,
        other: &Tensor,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize, usize) -> Op,
    ) -> Tensor {
        assert_eq!(
            self.shape, other.shape,
            "{name}: shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
        let data: Vec<f64> =
            self.with_data(|a| other.with_data(|b| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()));
        let rg = self.requires_grad() || other.requires_grad();
        let out = self.tape.push_value(name, self.shape.clone(), data, rg);
        if rg {
            self.tape.record(make(self.id, other.id, out.id));
        }
        out
    }

    fn unary_elementwise(
        &self,
        name: &str,
        f: impl Fn(f64) -> f64,
        make: impl Fn(usize, usize) -> Op,
    ) -> Tensor {
        let data: Vec<f64> = self.with_data(|a| a.iter().map(|x| f(*x)).collect());
        let rg = self.requires_grad();
        let out = self.tape.push_value(name, self.shape.clone(), data, rg);
        if rg {
            self.tape.record(make(self.id, out.id));
        }
        out
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.binary_elementwise(other, "add", |a, b| a + b, |a, b, out| Op::Add { a, b, out })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.binary_elementwise(other, "sub", |a, b| a - b, |a, b, out| Op::Sub { a, b, out })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.binary_elementwise(other, "mul", |a, b| a * b, |a, b, out| Op::Mul { a, b, out })
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        self.binary_elementwise(other, "div", |a, b| a / b, |a, b, out| Op::Div { a, b, out })
    }

    pub fn minimum(&self, other: &Tensor) -> Tensor {
        self.binary_elementwise(other, "minimum", f64::min, |a, b, out| Op::Minimum { a, b, out })
    }

    pub fn maximum(&self, other: &Tensor) -> Tensor {
        self.binary_elementwise(other, "maximum", f64::max, |a, b, out| Op::Maximum { a, b, out })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary_elementwise("scale", |a| a * c, |a, out| Op::Scale { a, out, c })
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary_elementwise("add_scalar", |a| a + c, |a, out| Op::AddScalar { a, out })
    }

    pub fn relu(&self) -> Tensor {
        self.unary_elementwise("relu", |a| a.max(0.0), |a, out| Op::Relu { a, out })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary_elementwise(
            "sigmoid",
            |a| 1.0 / (1.0 + (-a).exp()),
            |a, out| Op::Sigmoid { a, out },
        )
    }

    pub fn abs(&self) -> Tensor {
        self.unary_elementwise("abs", f64::abs, |a, out| Op::Abs { a, out })
    }

    /// Natural log with the argument clamped at [`crate::LOG_CLAMP`].
    pub fn log_clamped(&self) -> Tensor {
        self.unary_elementwise(
            "log",
            |a| a.max(crate::LOG_CLAMP).ln(),
            |a, out| Op::LogClamped { a, out },
        )
    }

    /// `x . W^T + b` over the trailing axis: x[..., in] -> [..., out].
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Tensor {
        let in_dim = self.cols();
        assert_eq!(weight.shape.len(), 2, "linear: weight must be 2-d, got {:?}", weight.shape);
        let (out_dim, w_in) = (weight.shape[0], weight.shape[1]);
        assert_eq!(
            in_dim, w_in,
            "linear: shape mismatch: x trailing dim {} (shape {:?}) vs weight {:?}",
            in_dim, self.shape, weight.shape
        );
        assert_eq!(
            bias.shape,
            vec![out_dim],
            "linear: bias shape {:?} does not match weight rows {}",
            bias.shape,
            out_dim
        );
        let m = self.rows();
        let data = self.with_data(|x| {
            weight.with_data(|w| {
                bias.with_data(|b| {
                    let mut y = Vec::with_capacity(m * out_dim);
                    for _ in 0..m {
                        y.extend_from_slice(b);
                    }
                    let mut wt = vec![0.0; w.len()];
                    crate::kernels::transpose(&mut wt, w, out_dim, in_dim);
                    gemm_nn(&mut y, x, &wt, m, in_dim, out_dim);
                    y
                })
            })
        });
        let mut out_shape = self.shape.clone();
        *out_shape.last_mut().unwrap() = out_dim;
        let rg = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        let out = self.tape.push_value("linear", out_shape, data, rg);
        if rg {
            self.tape.record(Op::Linear {
                x: self.id,
                w: weight.id,
                b: bias.id,
                out: out.id,
                m,
                in_dim,
                out_dim,
            });
        }
        out
    }

    /// a[m,k] * b[k,n]
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        assert_eq!(
            k, k2,
            "matmul: shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
        let data = self.with_data(|a| {
            other.with_data(|b| {
                let mut c = vec![0.0; m * n];
                gemm_nn(&mut c, a, b, m, k, n);
                c
            })
        });
        let rg = self.requires_grad() || other.requires_grad();
        let out = self.tape.push_value("matmul", vec![m, n], data, rg);
        if rg {
            self.tape.record(Op::MatmulNN { a: self.id, b: other.id, out: out.id, m, k, n });
        }
        out
    }

    /// a[m,k] * b[n,k]^T
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (other.rows(), other.cols());
        assert_eq!(
            k, k2,
            "matmul_nt: shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
        let data = self.with_data(|a| {
            other.with_data(|b| {
                let mut c = vec![0.0; m * n];
                crate::kernels::gemm_nt(&mut c, a, b, m, k, n);
                c
            })
        });
        let rg = self.requires_grad() || other.requires_grad();
        let out = self.tape.push_value("matmul_nt", vec![m, n], data, rg);
        if rg {
            self.tape.record(Op::MatmulNT { a: self.id, b: other.id, out: out.id, m, k, n });
        }
        out
    }

    /// Row-wise softmax over the trailing axis with a boolean mask. Masked
    /// positions are exactly zero in the output; each row must keep at least
    /// one allowed entry. The mask may have fewer rows than the input, in
    /// which case it tiles along the leading axis (stacked attention heads).
    pub fn softmax_masked(&self, mask: &Rc<AttnMask>) -> Tensor {
        let cols = self.cols();
        let rows = self.rows();
        assert_eq!(
            cols,
            mask.cols(),
            "softmax_masked: mask cols {} do not match logits trailing dim {} (shape {:?})",
            mask.cols(),
            cols,
            self.shape
        );
        assert!(
            rows.is_multiple_of(mask.rows()),
            "softmax_masked: {} logit rows are not a multiple of {} mask rows",
            rows,
            mask.rows()
        );
        let data = self.with_data(|l| {
            let mut y = vec![0.0; l.len()];
            for r in 0..rows {
                let allow = mask.row(r);
                let lr = &l[r * cols..(r + 1) * cols];
                let yr = &mut y[r * cols..(r + 1) * cols];
                let mut max = f64::NEG_INFINITY;
                for c in 0..cols {
                    if allow[c] && lr[c] > max {
                        max = lr[c];
                    }
                }
                if max == f64::NEG_INFINITY {
                    panic!("softmax_masked: row {r} is fully masked");
                }
                let mut sum = 0.0;
                for c in 0..cols {
                    if allow[c] {
                        let e = (lr[c] - max).exp();
                        yr[c] = e;
                        sum += e;
                    }
                }
                for c in 0..cols {
                    if allow[c] {
                        yr[c] /= sum;
                    }
                }
            }
            y
        });
        let rg = self.requires_grad();
        let out = self.tape.push_value("softmax_masked", self.shape.clone(), data, rg);
        if rg {
            self.tape.record(Op::SoftmaxMasked { out: out.id, logits: self.id, mask: Rc::clone(mask) });
        }
        out
    }

    pub fn softmax(&self) -> Tensor {
        let mask = Rc::new(AttnMask::all_allowed(self.rows(), self.cols()));
        self.softmax_masked(&mask)
    }

    /// Per-row normalization over the trailing axis followed by a learned
    /// affine map: `gain * (x - mean) / sqrt(var + eps) + shift`.
    pub fn layer_norm(&self, gain: &Tensor, shift: &Tensor) -> Tensor {
        let d = self.cols();
        assert!(d >= 1, "layer_norm: empty trailing dim");
        assert_eq!(gain.shape, vec![d], "layer_norm: gain shape {:?} vs dim {}", gain.shape, d);
        assert_eq!(shift.shape, vec![d], "layer_norm: shift shape {:?} vs dim {}", shift.shape, d);
        let rows = self.rows();
        let mut mean = vec![0.0; rows];
        let mut inv_std = vec![0.0; rows];
        let data = self.with_data(|x| {
            gain.with_data(|g| {
                shift.with_data(|s| {
                    let mut y = vec![0.0; x.len()];
                    for r in 0..rows {
                        let xr = &x[r * d..(r + 1) * d];
                        let mu = xr.iter().sum::<f64>() / d as f64;
                        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        mean[r] = mu;
                        inv_std[r] = inv;
                        let yr = &mut y[r * d..(r + 1) * d];
                        for c in 0..d {
                            yr[c] = g[c] * (xr[c] - mu) * inv + s[c];
                        }
                    }
                    y
                })
            })
        });
        let rg = self.requires_grad() || gain.requires_grad() || shift.requires_grad();
        let out = self.tape.push_value("layer_norm", self.shape.clone(), data, rg);
        if rg {
            self.tape.record(Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                shift: shift.id,
                out: out.id,
                rows,
                dim: d,
                mean,
                inv_std,
            });
        }
        out
    }

    pub fn sum_all(&self) -> Tensor {
        let data = vec![self.with_data(|d| d.iter().sum::<f64>())];
        let rg = self.requires_grad();
        let out = self.tape.push_value("sum_all", vec![1], data, rg);
        if rg {
            self.tape.record(Op::SumAll { a: self.id, out: out.id });
        }
        out
    }

    pub fn mean_all(&self) -> Tensor {
        self.sum_all().scale(1.0 / self.numel() as f64)
    }

    /// [n, d] -> [1, d] column means.
    pub fn mean_rows(&self) -> Tensor {
        let (rows, cols) = (self.rows(), self.cols());
        let data = self.with_data(|x| {
            let mut m = vec![0.0; cols];
            for r in 0..rows {
                crate::kernels::axpy(&mut m, 1.0, &x[r * cols..(r + 1) * cols]);
            }
            m.iter_mut().for_each(|v| *v /= rows as f64);
            m
        });
        let rg = self.requires_grad();
        let out = self.tape.push_value("mean_rows", vec![1, cols], data, rg);
        if rg {
            self.tape.record(Op::MeanRows { a: self.id, out: out.id, rows, cols });
        }
        out
    }

    /// [1, d] -> [n, d] by repetition.
    pub fn broadcast_rows(&self, n: usize) -> Tensor {
        assert_eq!(self.rows(), 1, "broadcast_rows: expected a single row, got {:?}", self.shape);
        let cols = self.cols();
        let data = self.with_data(|x| {
            let mut y = Vec::with_capacity(n * cols);
            for _ in 0..n {
                y.extend_from_slice(x);
            }
            y
        });
        let rg = self.requires_grad();
        let out = self.tape.push_value("broadcast_rows", vec![n, cols], data, rg);
        if rg {
            self.tape.record(Op::BroadcastRows { a: self.id, out: out.id, rows: n, cols });
        }
        out
    }

    /// 2-D block slice: rows [row0, row0+rows), cols [col0, col0+cols).
    pub fn narrow(&self, row0: usize, rows: usize, col0: usize, cols: usize) -> Tensor {
        let (a_rows, a_cols) = (self.rows(), self.cols());
        assert!(
            row0 + rows <= a_rows && col0 + cols <= a_cols,
            "narrow: block [{row0}+{rows}, {col0}+{cols}] exceeds shape {:?}",
            self.shape
        );
        let data = self.with_data(|x| {
            let mut y = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let src = (row0 + r) * a_cols + col0;
                y.extend_from_slice(&x[src..src + cols]);
            }
            y
        });
        let rg = self.requires_grad();
        let out = self.tape.push_value("narrow", vec![rows, cols], data, rg);
        if rg {
            self.tape.record(Op::Narrow {
                a: self.id,
                out: out.id,
                a_cols,
                row0,
                col0,
                rows,
                cols,
            });
        }
        out
    }

    /// Gather rows by index (duplicates allowed; gradients accumulate).
    pub fn select_rows(&self, indices: &Rc<Vec<usize>>) -> Tensor {
        let (a_rows, cols) = (self.rows(), self.cols());
        for &i in indices.iter() {
            assert!(i < a_rows, "select_rows: index {i} out of {a_rows} rows");
        }
        let data = self.with_data(|x| {
            let mut y = Vec::with_capacity(indices.len() * cols);
            for &i in indices.iter() {
                y.extend_from_slice(&x[i * cols..(i + 1) * cols]);
            }
            y
        });
        let rg = self.requires_grad();
        let out = self.tape.push_value("select_rows", vec![indices.len(), cols], data, rg);
        if rg {
            self.tape.record(Op::SelectRows {
                a: self.id,
                out: out.id,
                indices: Rc::clone(indices),
                cols,
            });
        }
        out
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.numel(),
            "reshape: {:?} -> {:?} changes element count",
            self.shape,
            shape
        );
        let data = self.data();
        let rg = self.requires_grad();
        let out = self.tape.push_value("reshape", shape.to_vec(), data, rg);
        if rg {
            self.tape.record(Op::Reshape { a: self.id, out: out.id });
        }
        out
    }

    /// Inverted dropout: keeps with probability `1 - p` and scales survivors
    /// by `1/(1-p)`. `sample` must return uniform values in [0, 1).
    pub fn dropout(&self, p: f64, sample: &mut dyn FnMut() -> f64) -> Tensor {
        assert!((0.0..1.0).contains(&p), "dropout: probability {p} outside [0, 1)");
        if p == 0.0 {
            return self.clone();
        }
        let keep = 1.0 - p;
        let mask: Rc<Vec<f64>> = Rc::new(
            (0..self.numel()).map(|_| if sample() < keep { 1.0 / keep } else { 0.0 }).collect(),
        );
        let data = self.with_data(|x| x.iter().zip(mask.iter()).map(|(v, m)| v * m).collect());
        let rg = self.requires_grad();
        let out = self.tape.push_value("dropout", self.shape.clone(), data, rg);
        if rg {
            self.tape.record(Op::Dropout { a: self.id, out: out.id, mask });
        }
        out
    }
}

/// Concatenate along the leading axis; every part must share the trailing dim.
pub fn concat_rows(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_rows: no parts");
    let cols = parts[0].cols();
    let tape = Rc::clone(parts[0].tape());
    let mut rows = 0usize;
    let mut data = Vec::new();
    let mut rg = false;
    for p in parts {
        assert_eq!(
            p.cols(),
            cols,
            "concat_rows: trailing dim mismatch: {:?} vs {} cols",
            p.shape(),
            cols
        );
        rows += p.rows();
        p.with_data(|d| data.extend_from_slice(d));
        rg |= p.requires_grad();
    }
    let out = tape.push_value("concat_rows", vec![rows, cols], data, rg);
    if rg {
        tape.record(Op::ConcatRows { parts: parts.iter().map(|p| p.id()).collect(), out: out.id(), cols });
    }
    out
}

/// Concatenate along the trailing axis; every part must share the row count.
pub fn concat_cols(parts: &[Tensor]) -> Tensor {
    assert!(!parts.is_empty(), "concat_cols: no parts");
    let rows = parts[0].rows();
    let tape = Rc::clone(parts[0].tape());
    let mut cols = 0usize;
    let mut rg = false;
    for p in parts {
        assert_eq!(p.rows(), rows, "concat_cols: row mismatch: {:?} vs {} rows", p.shape(), rows);
        cols += p.cols();
        rg |= p.requires_grad();
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            let pc = p.cols();
            p.with_data(|d| data.extend_from_slice(&d[r * pc..(r + 1) * pc]));
        }
    }
    let out = tape.push_value("concat_cols", vec![rows, cols], data, rg);
    if rg {
        tape.record(Op::ConcatCols { parts: parts.iter().map(|p| p.id()).collect(), out: out.id(), rows });
    }
    out
}

/// Look up embedding rows: table[vocab, d] gathered by token id.
pub fn embedding(table: &Tensor, ids: &[usize]) -> Tensor {
    let (vocab, dim) = (table.rows(), table.cols());
    for &id in ids {
        assert!(id < vocab, "embedding: id {id} out of vocabulary of {vocab}");
    }
    let ids: Rc<Vec<usize>> = Rc::new(ids.to_vec());
    let data = table.with_data(|t| {
        let mut y = Vec::with_capacity(ids.len() * dim);
        for &id in ids.iter() {
            y.extend_from_slice(&t[id * dim..(id + 1) * dim]);
        }
        y
    });
    let rg = table.requires_grad();
    let tape = Rc::clone(table.tape());
    let out = tape.push_value("embedding", vec![ids.len(), dim], data, rg);
    if rg {
        tape.record(Op::Embedding { table: table.id(), out: out.id(), ids, dim });
    }
    out
}
