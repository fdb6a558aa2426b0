//! Property tests for the masked softmax and attention invariants.

use std::rc::Rc;

use proptest::prelude::*;
use tapegrad::{AttnMask, Tape};

/// Rows x cols logits plus a mask that keeps at least one entry per row.
fn masked_rows() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<bool>)> {
    (1usize..5, 1usize..8).prop_flat_map(|(rows, cols)| {
        let logits = proptest::collection::vec(-30.0f64..30.0, rows * cols);
        let mask = proptest::collection::vec(any::<bool>(), rows * cols).prop_map(move |mut m| {
            for r in 0..rows {
                if !m[r * cols..(r + 1) * cols].iter().any(|&b| b) {
                    m[r * cols + (r % cols)] = true;
                }
            }
            m
        });
        (Just(rows), Just(cols), logits, mask)
    })
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_blocked_entries_are_exact_zeros(
        (rows, cols, logits, allow) in masked_rows()
    ) {
        let tape = Tape::new();
        let l = tape.constant(&[rows, cols], logits);
        let mask = Rc::new(AttnMask::from_rows(rows, cols, allow.clone()));
        let y = l.softmax_masked(&mask).data();
        for r in 0..rows {
            let row = &y[r * cols..(r + 1) * cols];
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "row {} sums to {}", r, sum);
            for c in 0..cols {
                if allow[r * cols + c] {
                    prop_assert!(row[c] > 0.0);
                } else {
                    prop_assert_eq!(row[c], 0.0);
                }
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant_per_row(
        (rows, cols, logits, allow) in masked_rows(),
        shift in -5.0f64..5.0,
    ) {
        let tape = Tape::new();
        let mask = Rc::new(AttnMask::from_rows(rows, cols, allow));
        let a = tape.constant(&[rows, cols], logits.clone()).softmax_masked(&mask).data();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let b = tape.constant(&[rows, cols], shifted).softmax_masked(&mask).data();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
