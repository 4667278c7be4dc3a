//! Training-time augmentation and sampling: mixup, spectrogram masking, a
//! class-balanced sampler and batch assembly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dsp::MelSpectrogram;
use crate::error::{invalid, mismatch, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Default Beta(α, α) parameter for mixup.
pub const MIXUP_ALPHA: f64 = 0.5;

/// Draws the mixing weight `λ ~ Beta(α, α)`.
pub fn sample_lambda(rng: &mut SeededRng, alpha: f64) -> Result<f64> {
    rng.beta(alpha)
}

/// `λ·a + (1−λ)·b` for both features and targets.
pub fn mixup(
    a: &MelSpectrogram,
    ya: &[f32],
    b: &MelSpectrogram,
    yb: &[f32],
    lambda: f64,
) -> Result<(MelSpectrogram, Vec<f32>)> {
    if (a.n_frames, a.n_mels) != (b.n_frames, b.n_mels) {
        return Err(mismatch("mixup", &[a.n_frames, a.n_mels], &[b.n_frames, b.n_mels]));
    }
    if ya.len() != yb.len() {
        return Err(mismatch("mixup", &[ya.len()], &[yb.len()]));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid("mixup", "lambda must lie in [0, 1]"));
    }
    let l = lambda as f32;
    let m = 1.0 - l;
    let values = a.values.iter().zip(&b.values).map(|(&x, &y)| l * x + m * y).collect();
    let target = ya.iter().zip(yb).map(|(&x, &y)| l * x + m * y).collect();
    Ok((
        MelSpectrogram {
            values,
            ..a.clone()
        },
        target,
    ))
}

/// Spectrogram masking configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpec {
    pub time_mask_max: usize,
    pub freq_mask_max: usize,
    pub num_masks: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            time_mask_max: 128,
            freq_mask_max: 16,
            num_masks: 1,
        }
    }
}

/// One drawn band pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskDraw {
    pub time_start: usize,
    pub time_width: usize,
    pub freq_start: usize,
    pub freq_width: usize,
}

/// Draws `num_masks` band pairs: widths uniform in `0..=max` (clamped to the
/// extent), start uniform over valid positions.
pub fn draw_masks(spec: &MelSpectrogram, ms: &MaskSpec, rng: &mut SeededRng) -> Vec<MaskDraw> {
    (0..ms.num_masks)
        .map(|_| {
            let time_width = rng.int_inclusive(0, ms.time_mask_max.min(spec.n_frames));
            let time_start = rng.int_inclusive(0, spec.n_frames - time_width);
            let freq_width = rng.int_inclusive(0, ms.freq_mask_max.min(spec.n_mels));
            let freq_start = rng.int_inclusive(0, spec.n_mels - freq_width);
            MaskDraw {
                time_start,
                time_width,
                freq_start,
                freq_width,
            }
        })
        .collect()
}

/// Fills the drawn bands with the mean of the unmasked spectrogram.
pub fn apply_masks(spec: &MelSpectrogram, draws: &[MaskDraw]) -> MelSpectrogram {
    let mean = (spec.values.iter().map(|&v| v as f64).sum::<f64>() / spec.values.len() as f64) as f32;
    let mut out = spec.clone();
    for d in draws {
        for t in 0..spec.n_frames {
            for f in 0..spec.n_mels {
                let in_time = t >= d.time_start && t < d.time_start + d.time_width;
                let in_freq = f >= d.freq_start && f < d.freq_start + d.freq_width;
                if in_time || in_freq {
                    out.values[t * spec.n_mels + f] = mean;
                }
            }
        }
    }
    out
}

pub fn spec_mask(spec: &MelSpectrogram, ms: &MaskSpec, rng: &mut SeededRng) -> MelSpectrogram {
    let draws = draw_masks(spec, ms, rng);
    apply_masks(spec, &draws)
}

/// Infinite stream of clip indices: a class uniformly, then a clip carrying
/// that class uniformly.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    per_class: Vec<Vec<usize>>,
    rng: SeededRng,
}

impl BalancedSampler {
    /// `labels[i]` lists the class ids of clip `i`.
    pub fn new(labels: &[Vec<usize>], classes: usize, rng: SeededRng) -> Result<Self> {
        let mut per_class = vec![Vec::new(); classes];
        for (i, ls) in labels.iter().enumerate() {
            for &c in ls {
                if c >= classes {
                    return Err(invalid("balanced_sampler", format!("clip {i} has class {c} >= {classes}")));
                }
                if !per_class[c].contains(&i) {
                    per_class[c].push(i);
                }
            }
        }
        if let Some(c) = per_class.iter().position(Vec::is_empty) {
            return Err(invalid("balanced_sampler", format!("class {c} has no clips")));
        }
        Ok(Self { per_class, rng })
    }
}

impl Iterator for BalancedSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let c = self.rng.below(self.per_class.len());
        let clips = &self.per_class[c];
        Some(clips[self.rng.below(clips.len())])
    }
}

/// Which augmentations to apply while assembling a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentFlags {
    pub training: bool,
    /// Beta parameter; `None` disables mixup.
    pub mixup_alpha: Option<f64>,
    pub mask: Option<MaskSpec>,
}

impl AugmentFlags {
    pub fn eval() -> Self {
        Self {
            training: false,
            mixup_alpha: None,
            mask: None,
        }
    }
}

/// A batch: features `[B, T, F]` and targets `[B, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub specs: Tensor<f32>,
    pub targets: Tensor<f32>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.specs.shape()[0]
    }

    pub fn spec(&self, i: usize) -> Tensor<f32> {
        let s = self.specs.shape();
        let n = s[1] * s[2];
        Tensor::new(&[s[1], s[2]], self.specs.data()[i * n..(i + 1) * n].to_vec()).unwrap()
    }

    pub fn target(&self, i: usize) -> Tensor<f32> {
        let c = self.targets.shape()[1];
        Tensor::new(&[c], self.targets.data()[i * c..(i + 1) * c].to_vec()).unwrap()
    }
}

/// Stacks clips into a batch. When training, row `i` is mixed with row
/// `B−1−i` (own λ per row), then masked.
pub fn assemble_batch(
    specs: &[MelSpectrogram],
    targets: &[Vec<f32>],
    flags: &AugmentFlags,
    rng: &mut SeededRng,
) -> Result<Batch> {
    let b = specs.len();
    if b == 0 || targets.len() != b {
        return Err(invalid("build_batch", "need equally many (non-zero) specs and targets"));
    }
    let (t, f) = (specs[0].n_frames, specs[0].n_mels);
    let c = targets[0].len();
    let mut rows: Vec<(MelSpectrogram, Vec<f32>)> = specs.iter().cloned().zip(targets.iter().cloned()).collect();
    if flags.training {
        if let Some(alpha) = flags.mixup_alpha {
            let mut mixed = Vec::with_capacity(b);
            for i in 0..b {
                let j = b - 1 - i;
                let lambda = sample_lambda(rng, alpha)?;
                mixed.push(mixup(&specs[i], &targets[i], &specs[j], &targets[j], lambda)?);
            }
            rows = mixed;
        }
        if let Some(ms) = flags.mask {
            for row in rows.iter_mut() {
                row.0 = spec_mask(&row.0, &ms, rng);
            }
        }
    }
    let mut sdata = Vec::with_capacity(b * t * f);
    let mut tdata = Vec::with_capacity(b * c);
    for (s, y) in &rows {
        if (s.n_frames, s.n_mels) != (t, f) || y.len() != c {
            return Err(mismatch("build_batch", &[s.n_frames, s.n_mels, y.len()], &[t, f, c]));
        }
        sdata.extend_from_slice(&s.values);
        tdata.extend_from_slice(y);
    }
    Ok(Batch {
        specs: Tensor::new(&[b, t, f], sdata)?,
        targets: Tensor::new(&[b, c], tdata)?,
    })
}
