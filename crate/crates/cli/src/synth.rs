//! Synthetic tone-burst dataset: background noise plus a few class-specific
//! sine bursts per clip, with exact event boundaries as ground truth.

use std::f64::consts::PI;
use std::path::Path;

use htsat_core::dsp::{hz_to_mel, mel_to_hz, Waveform};
use htsat_core::metrics::EventInterval;
use htsat_core::rng::{stream, SeededRng};

use crate::audio::write_wav;
use crate::error::{io_err, CliError, Result};
use crate::manifest::{ClipEntry, Manifest};

pub const MAX_CLASSES: usize = 32;
pub const NOISE_DBFS: f64 = -30.0;
pub const TONE_AMPLITUDE: f64 = 0.25;
pub const RAMP_SECONDS: f64 = 0.01;
/// Event boundaries are drawn on this grid so the manifest is exact.
pub const TIME_QUANTUM: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub n_clips: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration: f64,
    pub min_events: usize,
    pub max_events: usize,
    pub min_event_seconds: f64,
    pub max_event_seconds: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            n_clips: 64,
            n_classes: 8,
            seed: 0,
            sample_rate: 32_000,
            duration: 10.0,
            min_events: 1,
            max_events: 3,
            min_event_seconds: 0.5,
            max_event_seconds: 3.0,
        }
    }
}

impl SynthOptions {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Usage(format!("synth-data: {m}")));
        if self.n_classes == 0 || self.n_classes > MAX_CLASSES {
            return bad("n_classes must lie in 1..=32");
        }
        if self.n_clips == 0 || self.sample_rate == 0 {
            return bad("n_clips and sample_rate must be positive");
        }
        if self.min_events > self.max_events {
            return bad("min_events must not exceed max_events");
        }
        if !(self.min_event_seconds > 0.0
            && self.min_event_seconds <= self.max_event_seconds
            && self.min_event_seconds <= self.duration)
        {
            return bad("need 0 < min event length <= max event length, min event length <= duration");
        }
        if self.class_frequency(self.n_classes - 1) >= self.sample_rate as f64 / 2.0 {
            return bad("class frequencies exceed Nyquist");
        }
        Ok(())
    }

    /// Tone frequency of class `k`: mel-spaced between 300 Hz and 8 kHz.
    pub fn class_frequency(&self, k: usize) -> f64 {
        class_frequency(k, self.n_classes)
    }
}

pub fn class_frequency(k: usize, n_classes: usize) -> f64 {
    let (lo, hi) = (hz_to_mel(300.0), hz_to_mel(8000.0));
    if n_classes == 1 {
        return 300.0;
    }
    mel_to_hz(lo + (hi - lo) * k as f64 / (n_classes - 1) as f64)
}

fn quantize(x: f64) -> f64 {
    (x / TIME_QUANTUM).round() * TIME_QUANTUM
}

/// One generated clip and its events.
pub struct SynthClip {
    pub wave: Waveform,
    pub events: Vec<EventInterval>,
}

/// Draws one clip. Events in a clip carry distinct classes.
pub fn generate_clip(opts: &SynthOptions, rng: &mut SeededRng) -> Result<SynthClip> {
    let sr = opts.sample_rate as f64;
    let n = (opts.duration * sr).round() as usize;
    let noise_rms = 10f64.powf(NOISE_DBFS / 20.0);
    let mut samples: Vec<f64> = (0..n).map(|_| rng.normal() * noise_rms).collect();
    let k = rng.int_inclusive(opts.min_events, opts.max_events.min(opts.n_classes));
    let mut classes: Vec<usize> = (0..opts.n_classes).collect();
    for i in 0..k {
        let j = i + rng.below(opts.n_classes - i);
        classes.swap(i, j);
    }
    let mut events = Vec::with_capacity(k);
    for &class_id in &classes[..k] {
        let max_len = opts.max_event_seconds.min(opts.duration);
        let len = quantize(opts.min_event_seconds + rng.uniform() * (max_len - opts.min_event_seconds))
            .clamp(opts.min_event_seconds, max_len);
        let onset = quantize(rng.uniform() * (opts.duration - len)).max(0.0);
        let offset = (onset + len).min(opts.duration);
        let freq = opts.class_frequency(class_id);
        let phase = rng.uniform() * 2.0 * PI;
        let (a, b) = ((onset * sr).round() as usize, ((offset * sr).round() as usize).min(n));
        let ramp = ((RAMP_SECONDS * sr) as usize).max(1).min((b - a) / 2).max(1);
        for (i, s) in samples[a..b].iter_mut().enumerate() {
            let edge = i.min(b - a - 1 - i);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            *s += TONE_AMPLITUDE * env * (2.0 * PI * freq * (a + i) as f64 / sr + phase).sin();
        }
        events.push(EventInterval { class_id, onset, offset });
    }
    events.sort_by(|x, y| x.onset.total_cmp(&y.onset).then(x.class_id.cmp(&y.class_id)));
    let wave = Waveform::new(samples.iter().map(|&v| v as f32).collect(), opts.sample_rate)?;
    Ok(SynthClip { wave, events })
}

/// Writes `clip_NNNN.wav` files and `manifest.csv` (strong labels) into
/// `out_dir`, returning the manifest path.
pub fn generate(out_dir: &Path, opts: &SynthOptions) -> Result<std::path::PathBuf> {
    opts.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut rng = SeededRng::with_stream(opts.seed, stream::SYNTH);
    let mut entries = Vec::with_capacity(opts.n_clips);
    for i in 0..opts.n_clips {
        let clip = generate_clip(opts, &mut rng)?;
        let name = format!("clip_{i:04}.wav");
        let path = out_dir.join(&name);
        write_wav(&path, &clip.wave)?;
        let mut labels: Vec<usize> = clip.events.iter().map(|e| e.class_id).collect();
        labels.sort_unstable();
        entries.push(ClipEntry {
            path: name,
            resolved: path,
            labels,
            events: clip.events,
        });
    }
    let manifest = out_dir.join("manifest.csv");
    Manifest::write(&manifest, &entries)?;
    Ok(manifest)
}
