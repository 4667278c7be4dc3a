//! Patch tokenization and the window-stacked token grid.
//!
//! The spectrogram is cut into patch windows of `patch_window_frames` frames.
//! Inside each window, patches are enumerated time-patch by time-patch with
//! frequency patches adjacent, and windows follow one another: sequence index
//! `s = (w·rows + τ)·fp + φ` for window `w`, local time patch `τ` and
//! frequency patch `φ`. The canonical 2D layout stacks windows along the
//! frequency axis: `row = τ`, `col = w·fp + φ`.

use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::{invalid, mismatch, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Grid geometry at one pyramid stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    /// Local time patches per window.
    pub rows: usize,
    /// Frequency patches per window.
    pub freq: usize,
    /// Number of patch windows.
    pub windows: usize,
}

impl TokenGrid {
    pub fn new(rows: usize, freq: usize, windows: usize) -> Result<Self> {
        if rows == 0 || freq == 0 || windows == 0 {
            return Err(invalid("token_grid", "extents must be positive"));
        }
        Ok(Self { rows, freq, windows })
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        if !cfg.mel_bins.is_multiple_of(cfg.patch) || !cfg.patch_window_frames.is_multiple_of(cfg.patch) {
            return Err(invalid("token_grid", "patch must divide mel_bins and patch_window_frames"));
        }
        if !cfg.frames.is_multiple_of(cfg.patch_window_frames) {
            return Err(invalid("token_grid", "patch_window_frames must divide frames"));
        }
        Self::new(cfg.patch_window_frames / cfg.patch, cfg.freq_patches(), cfg.patch_windows())
    }

    pub fn cols(&self) -> usize {
        self.freq * self.windows
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Time extent of the equivalent time-major layout.
    pub fn time(&self) -> usize {
        self.rows * self.windows
    }

    /// Geometry after `merges` 2×2 patch merges.
    pub fn downsampled(&self, merges: u32) -> Result<Self> {
        let f = 1usize << merges;
        if !self.rows.is_multiple_of(f) || !self.freq.is_multiple_of(f) {
            return Err(invalid("token_grid", "grid not divisible for downsampling"));
        }
        Self::new(self.rows / f, self.freq / f, self.windows)
    }

    pub fn to_grid(&self, window: usize, tau: usize, phi: usize) -> (usize, usize) {
        (tau, window * self.freq + phi)
    }

    pub fn from_grid(&self, row: usize, col: usize) -> (usize, usize, usize) {
        (col / self.freq, row, col % self.freq)
    }

    /// Gather indices turning time-major tokens `[time, freq]` into the grid
    /// `[rows, cols]`.
    pub fn time_major_to_grid(&self) -> Vec<u32> {
        let mut idx = Vec::with_capacity(self.len());
        for row in 0..self.rows {
            for col in 0..self.cols() {
                let (w, tau, phi) = self.from_grid(row, col);
                idx.push(((w * self.rows + tau) * self.freq + phi) as u32);
            }
        }
        idx
    }

    /// Gather indices turning the grid back into time-major order.
    pub fn grid_to_time_major(&self) -> Vec<u32> {
        let mut idx = Vec::with_capacity(self.len());
        for t in 0..self.time() {
            for phi in 0..self.freq {
                let (row, col) = self.to_grid(t / self.rows, t % self.rows, phi);
                idx.push((row * self.cols() + col) as u32);
            }
        }
        idx
    }

    /// Gather indices from time-major tokens to the 1D window → time →
    /// frequency sequence. Window-major time-major is already that order, so
    /// this is the identity; kept explicit so the invariant is tested.
    pub fn sequence_order(&self) -> Vec<u32> {
        let mut idx = Vec::with_capacity(self.len());
        for w in 0..self.windows {
            for tau in 0..self.rows {
                for phi in 0..self.freq {
                    idx.push(((w * self.rows + tau) * self.freq + phi) as u32);
                }
            }
        }
        idx
    }

    /// Gather indices from the 1D sequence to the grid.
    pub fn sequence_to_grid(&self) -> Vec<u32> {
        let mut idx = Vec::with_capacity(self.len());
        for row in 0..self.rows {
            for col in 0..self.cols() {
                let (w, tau, phi) = self.from_grid(row, col);
                idx.push(((w * self.rows + tau) * self.freq + phi) as u32);
            }
        }
        idx
    }
}

/// Stride-`patch` convolution of a `[T, F]` spectrogram into time-major
/// tokens `[T/P, F/P, D]`. `weight` is `[D, 1, P, P]`, `bias` is `[D]`.
pub fn patch_embed<T: Real>(g: &mut Graph<T>, spec: Var, weight: Var, bias: Var, patch: usize) -> Result<Var> {
    let s = g.shape(spec).to_vec();
    if s.len() != 2 || patch == 0 || !s[0].is_multiple_of(patch) || !s[1].is_multiple_of(patch) {
        return Err(mismatch("patch_embed", &s, &[patch, patch]));
    }
    let x = g.reshape(spec, &[s[0], s[1], 1])?;
    g.conv2d(x, weight, bias, (patch, patch), (0, 0))
}

/// Time-major tokens `[N, D]` to the 1D sequence order.
pub fn order_tokens<T: Real>(tokens: &Tensor<T>, grid: &TokenGrid) -> Result<Tensor<T>> {
    check_count("order_tokens", tokens, grid)?;
    tokens.gather(&grid.sequence_order(), tokens.shape())
}

/// Inverse of [`order_tokens`].
pub fn unorder_tokens<T: Real>(seq: &Tensor<T>, grid: &TokenGrid) -> Result<Tensor<T>> {
    check_count("order_tokens", seq, grid)?;
    let inv = crate::tensor::invert_permutation(&grid.sequence_order());
    seq.gather(&inv, seq.shape())
}

/// 1D sequence `[N, D]` to grid `[rows, cols, D]`.
pub fn layout_grid<T: Real>(seq: &Tensor<T>, grid: &TokenGrid) -> Result<Tensor<T>> {
    check_count("layout_grid", seq, grid)?;
    let d = seq.shape()[seq.rank() - 1];
    let idx = expand_rows(&grid.sequence_to_grid(), d);
    seq.gather(&idx, &[grid.rows, grid.cols(), d])
}

/// Grid `[rows, cols, D]` to time-major `[time, freq, D]`.
pub fn grid_to_time_major<T: Real>(grid_t: &Tensor<T>, grid: &TokenGrid) -> Result<Tensor<T>> {
    if grid_t.shape().len() != 3 || grid_t.shape()[0] != grid.rows || grid_t.shape()[1] != grid.cols() {
        return Err(mismatch("grid_to_time_major", grid_t.shape(), &[grid.rows, grid.cols()]));
    }
    let d = grid_t.shape()[2];
    let idx = expand_rows(&grid.grid_to_time_major(), d);
    grid_t.gather(&idx, &[grid.time(), grid.freq, d])
}

/// Graph version: time-major `[time, freq, D]` to grid `[rows, cols, D]`.
pub fn layout_grid_var<T: Real>(g: &mut Graph<T>, tm: Var, grid: &TokenGrid) -> Result<Var> {
    let s = g.shape(tm).to_vec();
    if s.len() != 3 || s[0] != grid.time() || s[1] != grid.freq {
        return Err(mismatch("layout_grid", &s, &[grid.time(), grid.freq]));
    }
    let idx = expand_rows(&grid.time_major_to_grid(), s[2]);
    g.gather(tm, idx, &[grid.rows, grid.cols(), s[2]])
}

/// Graph version of [`grid_to_time_major`].
pub fn grid_to_time_major_var<T: Real>(g: &mut Graph<T>, x: Var, grid: &TokenGrid) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[0] != grid.rows || s[1] != grid.cols() {
        return Err(mismatch("grid_to_time_major", &s, &[grid.rows, grid.cols()]));
    }
    let idx = expand_rows(&grid.grid_to_time_major(), s[2]);
    g.gather(x, idx, &[grid.time(), grid.freq, s[2]])
}

fn check_count<T: Real>(op: &'static str, t: &Tensor<T>, grid: &TokenGrid) -> Result<()> {
    if t.rank() != 2 || t.shape()[0] != grid.len() {
        return Err(mismatch(op, t.shape(), &[grid.len()]));
    }
    Ok(())
}

/// Expands token-level gather indices to element level for rows of width `d`.
pub fn expand_rows(token_idx: &[u32], d: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(token_idx.len() * d);
    for &t in token_idx {
        let base = t as usize * d;
        out.extend((base..base + d).map(|v| v as u32));
    }
    out
}
