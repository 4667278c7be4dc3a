//! Attention-window partitioning with optional cyclic shift and the
//! cross-region mask that goes with it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::{invert_permutation, Tensor};

/// Logit offset standing in for −∞ on masked pairs.
pub const MASK_VALUE: f64 = -1e4;

/// Partition of a `rows × cols` token grid into `M × M` windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLayout {
    pub rows: usize,
    pub cols: usize,
    pub window: usize,
    pub shift: usize,
}

impl WindowLayout {
    pub fn new(rows: usize, cols: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 || !rows.is_multiple_of(window) || !cols.is_multiple_of(window) {
            return Err(invalid(
                "window_partition",
                alloc::format!("window {window} does not divide grid {rows}x{cols}"),
            ));
        }
        if shift != 0 && shift != window / 2 {
            return Err(invalid("window_partition", "shift must be 0 or window/2"));
        }
        Ok(Self {
            rows,
            cols,
            window,
            shift,
        })
    }

    /// k, the number of windows.
    pub fn count(&self) -> usize {
        (self.rows / self.window) * (self.cols / self.window)
    }

    /// Tokens per window, `M²`.
    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    /// Grid coordinate of token `local` in window `w`, after undoing the
    /// `(−shift, −shift)` roll.
    pub fn source(&self, w: usize, local: usize) -> (usize, usize) {
        let per_row = self.cols / self.window;
        let (wi, wj) = (w / per_row, w % per_row);
        let (a, b) = (local / self.window, local % self.window);
        let r = wi * self.window + a;
        let c = wj * self.window + b;
        ((r + self.shift) % self.rows, (c + self.shift) % self.cols)
    }

    /// Token-level gather indices: windowed `[k, M²]` from grid `[rows, cols]`.
    pub fn partition_indices(&self) -> Vec<u32> {
        let mut idx = Vec::with_capacity(self.rows * self.cols);
        for w in 0..self.count() {
            for local in 0..self.tokens() {
                let (r, c) = self.source(w, local);
                idx.push((r * self.cols + c) as u32);
            }
        }
        idx
    }

    /// Token-level gather indices undoing [`Self::partition_indices`].
    pub fn reverse_indices(&self) -> Vec<u32> {
        invert_permutation(&self.partition_indices())
    }

    /// Region label of a rolled-grid coordinate along one axis.
    fn region(pos: usize, extent: usize, window: usize, shift: usize) -> usize {
        if pos < extent - window {
            0
        } else if pos < extent - shift {
            1
        } else {
            2
        }
    }

    /// Additive mask `[k, M², M²]`: 0 where both tokens come from the same
    /// pre-shift region, [`MASK_VALUE`] otherwise. `None` when unshifted.
    pub fn mask<T: Real>(&self) -> Option<Tensor<T>> {
        if self.shift == 0 {
            return None;
        }
        let n = self.tokens();
        let per_row = self.cols / self.window;
        let mut labels = vec![0usize; self.count() * n];
        for w in 0..self.count() {
            let (wi, wj) = (w / per_row, w % per_row);
            for local in 0..n {
                let r = wi * self.window + local / self.window;
                let c = wj * self.window + local % self.window;
                labels[w * n + local] = Self::region(r, self.rows, self.window, self.shift) * 3
                    + Self::region(c, self.cols, self.window, self.shift);
            }
        }
        let neg = T::from_f64(MASK_VALUE);
        Some(Tensor::from_fn(&[self.count(), n, n], |i| {
            let w = i / (n * n);
            let (a, b) = ((i / n) % n, i % n);
            if labels[w * n + a] == labels[w * n + b] {
                T::ZERO
            } else {
                neg
            }
        }))
    }

    /// Mask replicated across heads: `[k, heads, M², M²]`.
    pub fn mask_for_heads<T: Real>(&self, heads: usize) -> Option<Tensor<T>> {
        let m = self.mask::<T>()?;
        let n2 = self.tokens() * self.tokens();
        let mut data = Vec::with_capacity(m.len() * heads);
        for w in 0..self.count() {
            for _ in 0..heads {
                data.extend_from_slice(&m.data()[w * n2..(w + 1) * n2]);
            }
        }
        Some(Tensor::new(&[self.count(), heads, self.tokens(), self.tokens()], data).unwrap())
    }
}

/// Index into the `(2M−1)²` relative-position table for every token pair of
/// an `M × M` window.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let dr = (i / window) + window - 1 - (j / window);
            let dc = (i % window) + window - 1 - (j % window);
            idx.push(dr * span + dc);
        }
    }
    idx
}
