//! Boolean attention masks.

/// A dense boolean mask over a `rows x cols` score matrix. `true` means the
/// entry participates in the softmax; `false` entries come out exactly zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl AttnMask {
    pub fn all_allowed(rows: usize, cols: usize) -> Self {
        AttnMask { rows, cols, allow: vec![true; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                allow.push(f(r, c));
            }
        }
        AttnMask { rows, cols, allow }
    }

    pub fn from_rows(rows: usize, cols: usize, allow: Vec<bool>) -> Self {
        assert_eq!(
            allow.len(),
            rows * cols,
            "mask buffer length {} does not match {}x{}",
            allow.len(),
            rows,
            cols
        );
        AttnMask { rows, cols, allow }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allow[row * self.cols + col]
    }

    /// Mask row for a score-matrix row; masks tile along the row axis so one
    /// per-query mask can serve several attention heads stacked head-major.
    #[inline]
    pub(crate) fn row(&self, score_row: usize) -> &[bool] {
        let r = score_row % self.rows;
        &self.allow[r * self.cols..(r + 1) * self.cols]
    }

    pub fn count_allowed(&self) -> usize {
        self.allow.iter().filter(|&&a| a).count()
    }
}
