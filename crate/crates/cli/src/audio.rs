//! WAV input/output and clip feature extraction.

use std::path::Path;

use htsat_core::dsp::{repeat_clip, resample, MelFrontend, MelSpectrogram, Waveform};
use htsat_core::ModelConfig;

use crate::error::{CliError, CoreContext, Result};

/// Reads a WAV file as mono `f32` at its native rate (channels averaged).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |source| CliError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>().map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let ch = spec.channels as usize;
    let samples = interleaved
        .chunks_exact(ch)
        .map(|frame| frame.iter().sum::<f32>() / ch as f32)
        .collect();
    Waveform::new(samples, spec.sample_rate).context(path.display())
}

/// Writes mono 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let wav_err = |source| CliError::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Reads, resamples and repeats (when shorter than the model's clip length)
/// a WAV file into the model's fixed-size log-mel spectrogram.
pub struct FeatureLoader {
    frontend: MelFrontend,
    config: ModelConfig,
}

impl FeatureLoader {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            frontend: MelFrontend::new(config)?,
            config: config.clone(),
        })
    }

    pub fn prepare(&self, w: &Waveform) -> htsat_core::Result<Waveform> {
        let mut w = resample(w, self.config.sample_rate)?;
        if w.samples.len() < self.config.clip_samples() {
            w = repeat_clip(&w, self.config.clip_seconds())?;
        }
        Ok(w)
    }

    pub fn load(&self, path: &Path) -> Result<MelSpectrogram> {
        let w = read_wav(path)?;
        let w = self.prepare(&w).context(path.display())?;
        self.frontend.log_mel(&w).context(path.display())
    }
}
