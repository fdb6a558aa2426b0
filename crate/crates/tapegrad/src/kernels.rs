//! Dense f64 matrix kernels.
//!
//! All three GEMM layouts used by the forward and backward passes are
//! expressed with contiguous inner loops (dot products or row axpys) so the
//! compiler can vectorize them. Accumulation order is fixed, which keeps
//! results bit-identical across runs on one machine.

/// Dot product with eight independent accumulators.
///
/// The accumulator split breaks the serial FMA dependency chain; the
/// reduction tree at the end is a fixed expression, so the result is
/// deterministic.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    let a8 = &a[..chunks * 8];
    let b8 = &b[..chunks * 8];
    for (ca, cb) in a8.chunks_exact(8).zip(b8.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// y += alpha * x
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

/// c[m,n] += a[m,k] * b[k,n]
pub fn gemm_nn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            axpy(c_row, aip, &b[p * n..(p + 1) * n]);
        }
    }
}

/// Transpose `src[rows, cols]` into `dst[cols, rows]`.
pub fn transpose(dst: &mut [f64], src: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// c[m,n] += a[m,k] * b[n,k]^T  (rows of `b` are the columns of the product)
///
/// Materializes b^T and runs the row-axpy kernel: the transpose is O(nk)
/// against O(mkn) multiplies and the contiguous form vectorizes far better
/// than per-entry dot products.
pub fn gemm_nt(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let mut bt = vec![0.0; n * k];
    transpose(&mut bt, b, n, k);
    gemm_nn(c, a, &bt, m, k, n);
}

/// c[m,n] += a[k,m]^T * b[k,n]
pub fn gemm_tn(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            axpy(&mut c[i * n..(i + 1) * n], api, b_row);
        }
    }
}
