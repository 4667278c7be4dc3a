//! Log-mel frontend: STFT, mel filterbank, padding to a fixed frame count,
//! clip repetition and rational resampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::config::ModelConfig;
use crate::error::{invalid, Result};

/// Floor added to mel power before the logarithm.
pub const LOG_EPS: f64 = 1e-10;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("waveform", "sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("waveform", "non-finite sample"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-mel features, `n_frames × n_mels`, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f32>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub hop_seconds: f64,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn at(&self, frame: usize, mel: usize) -> f32 {
        self.values[frame * self.n_mels + mel]
    }

    pub fn frame(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.n_mels..(frame + 1) * self.n_mels]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// STFT result: `frames × bins` complex values.
#[derive(Debug, Clone)]
pub struct Stft {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex>,
}

impl Stft {
    pub fn frame(&self, t: usize) -> &[Complex] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// In-place FFT. Radix-2 for power-of-two lengths, direct DFT otherwise.
pub fn fft(buf: &mut [Complex]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if !n.is_power_of_two() {
        let src = buf.to_vec();
        for (k, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex::default();
            for (j, x) in src.iter().enumerate() {
                let ang = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                let (s, c) = (libm::sin(ang), libm::cos(ang));
                acc.re += x.re * c - x.im * s;
                acc.im += x.re * s + x.im * c;
            }
            *out = acc;
        }
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = (libm::sin(ang * k as f64), libm::cos(ang * k as f64));
                let a = buf[start + k];
                let b = buf[start + k + half];
                let t = Complex {
                    re: b.re * c - b.im * s,
                    im: b.re * s + b.im * c,
                };
                buf[start + k] = Complex {
                    re: a.re + t.re,
                    im: a.im + t.im,
                };
                buf[start + k + half] = Complex {
                    re: a.re - t.re,
                    im: a.im - t.im,
                };
            }
        }
        len <<= 1;
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64)).collect()
}

/// Centered STFT: the signal is reflect-padded by `window_size / 2` on each
/// side, Hann-windowed, and yields `(len + 2·pad − window)/hop + 1` frames of
/// `window_size / 2 + 1` bins.
pub fn stft(w: &Waveform, window_size: usize, hop_size: usize) -> Result<Stft> {
    stft_with_window(&w.samples, &hann(window_size), hop_size)
}

fn stft_with_window(samples: &[f32], window: &[f64], hop_size: usize) -> Result<Stft> {
    let n = window.len();
    if hop_size == 0 || n < hop_size {
        return Err(invalid("stft", "need window_size >= hop_size > 0"));
    }
    let pad = n / 2;
    let len = samples.len();
    if len <= pad || len + 2 * pad < n {
        return Err(invalid(
            "stft",
            format!("waveform of {len} samples is shorter than one window after padding"),
        ));
    }
    let padded: Vec<f64> = (0..len + 2 * pad)
        .map(|i| {
            let j = i as isize - pad as isize;
            let k = if j < 0 {
                -j
            } else if j as usize >= len {
                2 * (len as isize - 1) - j
            } else {
                j
            };
            samples[k as usize] as f64
        })
        .collect();
    let frames = (padded.len() - n) / hop_size + 1;
    let bins = n / 2 + 1;
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::default(); n];
    for t in 0..frames {
        let seg = &padded[t * hop_size..t * hop_size + n];
        for ((b, &x), &wv) in buf.iter_mut().zip(seg).zip(window) {
            *b = Complex { re: x * wv, im: 0.0 };
        }
        fft(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Stft { frames, bins, data })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank with Slaney area normalization.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub bins: usize,
    /// `n_mels × bins`, row-major.
    pub weights: Vec<f64>,
    /// `n_mels + 2` band edges in Hz.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// Center frequency of filter `m`.
    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    /// Applies the filterbank to a power spectrum of `bins` values.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (&w, &p) in self.row(m).iter().zip(power) {
                acc += w * p;
            }
            *o = acc;
        }
    }
}

pub fn mel_filterbank(n_fft: usize, n_mels: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<MelFilterbank> {
    let op = "mel_filterbank";
    if n_mels == 0 || n_fft < 2 {
        return Err(invalid(op, "need n_mels >= 1 and n_fft >= 2"));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(invalid(op, "need 0 <= fmin < fmax <= sample_rate / 2"));
    }
    let bins = n_fft / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut weights = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (lo, c, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let enorm = 2.0 / (hi - lo);
        let mut any = false;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (c - lo);
            let down = (hi - f) / (hi - c);
            let v = up.min(down).max(0.0) * enorm;
            if v > 0.0 {
                any = true;
            }
            weights[m * bins + k] = v;
        }
        if !any {
            return Err(invalid(
                op,
                format!("filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; too many mel bands for {n_fft}-point FFT"),
            ));
        }
    }
    Ok(MelFilterbank {
        n_mels,
        bins,
        weights,
        edges_hz,
    })
}

/// Reusable log-mel extractor for one configuration.
#[derive(Debug, Clone)]
pub struct MelFrontend {
    pub filterbank: MelFilterbank,
    window: Vec<f64>,
    hop_size: usize,
    sample_rate: u32,
    frames: usize,
}

impl MelFrontend {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            filterbank: mel_filterbank(cfg.window_size, cfg.mel_bins, cfg.sample_rate, cfg.fmin, cfg.fmax)?,
            window: hann(cfg.window_size),
            hop_size: cfg.hop_size,
            sample_rate: cfg.sample_rate,
            frames: cfg.frames,
        })
    }

    /// `ln(mel power + LOG_EPS)`, `frames × n_mels`.
    ///
    /// The centered STFT yields `len/hop + 1` frames; the trailing one is
    /// dropped so a clip of `k·hop` samples maps to exactly `k` frames, and
    /// the result is then padded with `ln(LOG_EPS)` (silence) or truncated to
    /// the configured frame count.
    pub fn log_mel(&self, w: &Waveform) -> Result<MelSpectrogram> {
        if w.sample_rate != self.sample_rate {
            return Err(invalid(
                "log_mel",
                format!("waveform at {} Hz, frontend expects {} Hz", w.sample_rate, self.sample_rate),
            ));
        }
        let spec = stft_with_window(&w.samples, &self.window, self.hop_size)?;
        let n_mels = self.filterbank.n_mels;
        let keep = (w.samples.len() / self.hop_size).min(spec.frames).min(self.frames);
        let floor = libm::log(LOG_EPS) as f32;
        let mut values = vec![floor; self.frames * n_mels];
        let mut power = vec![0.0; spec.bins];
        let mut mel = vec![0.0; n_mels];
        for t in 0..keep {
            for (p, c) in power.iter_mut().zip(spec.frame(t)) {
                *p = c.norm_sqr();
            }
            self.filterbank.apply(&power, &mut mel);
            for (o, &m) in values[t * n_mels..(t + 1) * n_mels].iter_mut().zip(&mel) {
                *o = libm::log(m + LOG_EPS) as f32;
            }
        }
        Ok(MelSpectrogram {
            values,
            n_frames: self.frames,
            n_mels,
            hop_seconds: self.hop_size as f64 / self.sample_rate as f64,
            sample_rate: self.sample_rate,
        })
    }
}

pub fn log_mel(w: &Waveform, cfg: &ModelConfig) -> Result<MelSpectrogram> {
    MelFrontend::new(cfg)?.log_mel(w)
}

/// Tiles a short clip end to end `floor(target / len)` times and zero-pads the
/// remainder.
pub fn repeat_clip(w: &Waveform, target_seconds: f64) -> Result<Waveform> {
    let len = w.samples.len();
    if len == 0 {
        return Err(invalid("repeat_clip", "empty clip"));
    }
    let target = libm::round(target_seconds * w.sample_rate as f64) as usize;
    if target < len {
        return Err(invalid(
            "repeat_clip",
            format!("target {target_seconds} s is shorter than the {:.3} s clip", w.seconds()),
        ));
    }
    let reps = target / len;
    let mut samples = Vec::with_capacity(target);
    for _ in 0..reps {
        samples.extend_from_slice(&w.samples);
    }
    samples.resize(target, 0.0);
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase rational resampling with a Blackman-windowed sinc low-pass.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(invalid("resample", "target rate must be positive"));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let g = gcd(w.sample_rate as u64, target_rate as u64);
    let up = (target_rate as u64 / g) as usize;
    let down = (w.sample_rate as u64 / g) as usize;
    let factor = up.max(down);
    let half = 16 * factor;
    let taps = 2 * half + 1;
    let fc = 0.5 / factor as f64;
    let h: Vec<f64> = (0..taps)
        .map(|k| {
            let x = k as f64 - half as f64;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                libm::sin(2.0 * PI * fc * x) / (PI * x)
            };
            let n = k as f64 / (taps - 1) as f64;
            let win = 0.42 - 0.5 * libm::cos(2.0 * PI * n) + 0.08 * libm::cos(4.0 * PI * n);
            up as f64 * sinc * win
        })
        .collect();
    let len = w.samples.len();
    let out_len = (len * up).div_ceil(down);
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        // upsampled-domain position of the filter center
        let center = n * down + half;
        let lo = center.saturating_sub(taps - 1).div_ceil(up);
        let hi = (center / up).min(len.saturating_sub(1));
        let mut acc = 0.0;
        let mut i = lo;
        while i <= hi && i < len {
            acc += h[center - i * up] * w.samples[i] as f64;
            i += 1;
        }
        out.push(acc as f32);
    }
    Waveform::new(out, target_rate)
}
