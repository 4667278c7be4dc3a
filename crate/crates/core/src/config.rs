//! Model and feature configuration.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// All architecture and feature hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// STFT window length in samples.
    pub window_size: usize,
    pub hop_size: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// T: spectrogram frames after pad/truncate.
    pub frames: usize,
    /// F: mel bins.
    pub mel_bins: usize,
    /// P: patch side.
    pub patch: usize,
    pub patch_window_frames: usize,
    /// D: stage-0 embedding dimension.
    pub embed_dim: usize,
    /// M: attention window side.
    pub window: usize,
    /// C: event classes.
    pub classes: usize,
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    pub mlp_ratio: f64,
    pub rel_pos_bias: bool,
    pub abs_pos_embed: bool,
}

/// Geometry of one encoder group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageGeometry {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    /// Effective window side (clamped to the grid when the grid is small).
    pub window: usize,
    /// Shift used by odd-indexed blocks; zero when the window covers the grid.
    pub shift: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32_000,
            window_size: 1024,
            hop_size: 320,
            fmin: 50.0,
            fmax: 14_000.0,
            frames: 1024,
            mel_bins: 64,
            patch: 4,
            patch_window_frames: 256,
            embed_dim: 96,
            window: 8,
            classes: 527,
            depths: vec![2, 2, 6, 2],
            heads: vec![4, 8, 16, 32],
            mlp_ratio: 4.0,
            rel_pos_bias: true,
            abs_pos_embed: false,
        }
    }
}

impl ModelConfig {
    /// Desk-scale preset that exercises every code path in seconds.
    pub fn tiny() -> Self {
        Self {
            frames: 256,
            patch_window_frames: 64,
            embed_dim: 24,
            window: 4,
            classes: 8,
            depths: vec![1, 1, 2, 1],
            heads: vec![1, 2, 4, 8],
            ..Self::default()
        }
    }

    pub fn groups(&self) -> usize {
        self.depths.len()
    }

    /// Downsampling factor of the final stage relative to the patch grid.
    pub fn merge_factor(&self) -> usize {
        1 << (self.groups() - 1)
    }

    pub fn freq_patches(&self) -> usize {
        self.mel_bins / self.patch
    }

    pub fn time_patches(&self) -> usize {
        self.frames / self.patch
    }

    pub fn patch_windows(&self) -> usize {
        self.frames / self.patch_window_frames
    }

    /// Stage-0 token grid `(rows, cols)`.
    pub fn grid(&self) -> (usize, usize) {
        (
            self.patch_window_frames / self.patch,
            self.freq_patches() * self.patch_windows(),
        )
    }

    pub fn final_dim(&self) -> usize {
        self.embed_dim * self.merge_factor()
    }

    /// Time steps of the presence map, `T / (8P)` for four groups.
    pub fn map_steps(&self) -> usize {
        self.frames / (self.patch * self.merge_factor())
    }

    /// Frequency extent of the final time-major map, `F / (8P)`.
    pub fn final_freq(&self) -> usize {
        self.mel_bins / (self.patch * self.merge_factor())
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_size as f64 / self.sample_rate as f64
    }

    /// Duration of one presence-map time step.
    pub fn map_step_seconds(&self) -> f64 {
        self.hop_seconds() * (self.patch * self.merge_factor()) as f64
    }

    /// Clip duration covered by `frames` spectrogram frames.
    pub fn clip_seconds(&self) -> f64 {
        self.frames as f64 * self.hop_seconds()
    }

    pub fn clip_samples(&self) -> usize {
        self.frames * self.hop_size
    }

    pub fn stage(&self, g: usize) -> StageGeometry {
        let (rows0, cols0) = self.grid();
        let f = 1 << g;
        let (rows, cols) = (rows0 / f, cols0 / f);
        let smallest = rows.min(cols);
        let (window, shift) = if smallest <= self.window {
            (smallest, 0)
        } else {
            (self.window, self.window / 2)
        };
        StageGeometry {
            rows,
            cols,
            dim: self.embed_dim * f,
            heads: self.heads[g],
            depth: self.depths[g],
            window,
            shift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let op = "config";
        let g = self.groups();
        if g == 0 || self.heads.len() != g {
            return Err(invalid(op, "depths and heads must be non-empty and of equal length"));
        }
        let positive = [
            self.sample_rate as usize,
            self.window_size,
            self.hop_size,
            self.frames,
            self.mel_bins,
            self.patch,
            self.patch_window_frames,
            self.embed_dim,
            self.window,
            self.classes,
        ];
        if positive.contains(&0) || self.depths.contains(&0) {
            return Err(invalid(op, "all sizes must be positive"));
        }
        if self.window_size < self.hop_size {
            return Err(invalid(op, "window_size must be at least hop_size"));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(invalid(op, "need 0 <= fmin < fmax <= sample_rate / 2"));
        }
        if !self.mel_bins.is_multiple_of(self.patch) || !self.patch_window_frames.is_multiple_of(self.patch) {
            return Err(invalid(op, "patch must divide mel_bins and patch_window_frames"));
        }
        if !self.frames.is_multiple_of(self.patch_window_frames) {
            return Err(invalid(op, "patch_window_frames must divide frames"));
        }
        let m = self.merge_factor();
        let (rows, _) = self.grid();
        if rows % m != 0 || !self.freq_patches().is_multiple_of(m) {
            return Err(invalid(
                op,
                format!("patch grid ({rows} rows, {} freq patches) not divisible by {m}", self.freq_patches()),
            ));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(invalid(op, "mlp_ratio must be positive"));
        }
        for s in 0..g {
            let st = self.stage(s);
            if !st.dim.is_multiple_of(st.heads) {
                return Err(invalid(op, format!("stage {s}: dim {} not divisible by {} heads", st.dim, st.heads)));
            }
            if !st.rows.is_multiple_of(st.window) || !st.cols.is_multiple_of(st.window) {
                return Err(invalid(
                    op,
                    format!("stage {s}: window {} does not divide grid {}x{}", st.window, st.rows, st.cols),
                ));
            }
        }
        Ok(())
    }

    pub fn mlp_hidden(&self, dim: usize) -> usize {
        libm::round(dim as f64 * self.mlp_ratio) as usize
    }
}
