//! Finite-difference gradient verification.
//!
//! The reference gradient here never touches the tape: it only re-evaluates
//! a black-box forward function, so it stays independent of the autodiff
//! implementation it is used to check.

/// Central finite differences: g[i] = (f(x + h e_i) - f(x - h e_i)) / 2h.
pub fn central_diff_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Worst relative disagreement between two gradients, elementwise.
///
/// Entries where both sides are below `abs_floor` are treated as matching
/// zeros (finite differences carry ~1e-10 of roundoff noise that would
/// otherwise blow up the relative error of true-zero gradients).
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        let diff = (a - n).abs();
        if diff <= abs_floor {
            continue;
        }
        let denom = a.abs().max(n.abs());
        let rel = if denom > 0.0 { diff / denom } else { f64::INFINITY };
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

/// Default step for central differences in f64: balances truncation O(h^2)
/// against cancellation O(eps/h).
pub const DEFAULT_STEP: f64 = 1e-5;
