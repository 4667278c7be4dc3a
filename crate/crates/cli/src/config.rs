//! `key = value` run configuration: model architecture plus training and
//! decoding settings.

use std::fmt::Write as _;
use std::str::FromStr;

use htsat_core::augment::{AugmentFlags, MaskSpec};
use htsat_core::metrics::DecodeParams;
use htsat_core::ModelConfig;

use crate::error::{CliError, Result};

/// Training, augmentation and decoding settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Beta parameter for mixup; `0` disables mixup.
    pub mixup_alpha: f64,
    /// Maximum masked frames; `0` together with `freq_mask = 0` disables masking.
    pub time_mask: usize,
    pub freq_mask: usize,
    pub num_masks: usize,
    /// Number of most recent epoch checkpoints averaged into the final model.
    pub avg_last: usize,
    pub balanced: bool,
    pub threshold: f32,
    pub min_duration: f64,
    pub collar: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: 100,
            batch_size: 8,
            base_lr: 1e-3,
            weight_decay: 0.05,
            mixup_alpha: 0.5,
            time_mask: 128,
            freq_mask: 16,
            num_masks: 1,
            avg_last: 5,
            balanced: true,
            threshold: 0.5,
            min_duration: 0.1,
            collar: 0.2,
        }
    }
}

impl TrainingConfig {
    pub fn augment_flags(&self) -> AugmentFlags {
        let masking = self.num_masks > 0 && (self.time_mask > 0 || self.freq_mask > 0);
        AugmentFlags {
            training: true,
            mixup_alpha: (self.mixup_alpha > 0.0).then_some(self.mixup_alpha),
            mask: masking.then_some(MaskSpec {
                time_mask_max: self.time_mask,
                freq_mask_max: self.freq_mask,
                num_masks: self.num_masks,
            }),
        }
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            threshold: self.threshold,
            min_duration: self.min_duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| CliError::Config {
        line,
        msg: format!("invalid value {value:?} for {key}"),
    })
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_value(line, key, v.trim())).collect()
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config {
            line,
            msg: format!("invalid boolean {value:?} for {key}"),
        }),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn tiny() -> Self {
        Self {
            model: ModelConfig::tiny(),
            training: TrainingConfig::default(),
        }
    }

    /// Parses a config file. A `preset` line (`tiny` or `default`) selects the
    /// base values wherever it appears; every other key overrides them.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| CliError::Config {
                line,
                msg: format!("expected `key = value`, got {content:?}"),
            })?;
            entries.push((line, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = RunConfig::default();
        for (line, k, v) in &entries {
            if k == "preset" {
                cfg.model = match v.as_str() {
                    "tiny" => ModelConfig::tiny(),
                    "default" => ModelConfig::default(),
                    _ => {
                        return Err(CliError::Config {
                            line: *line,
                            msg: format!("unknown preset {v:?}"),
                        })
                    }
                };
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (line, k, v) in &entries {
            let (line, k, v) = (*line, k.as_str(), v.as_str());
            if !seen.insert(k) {
                return Err(CliError::Config {
                    line,
                    msg: format!("duplicate key {k}"),
                });
            }
            let m = &mut cfg.model;
            let t = &mut cfg.training;
            match k {
                "preset" => {}
                "sample_rate" => m.sample_rate = parse_value(line, k, v)?,
                "window_size" => m.window_size = parse_value(line, k, v)?,
                "hop_size" => m.hop_size = parse_value(line, k, v)?,
                "fmin" => m.fmin = parse_value(line, k, v)?,
                "fmax" => m.fmax = parse_value(line, k, v)?,
                "frames" => m.frames = parse_value(line, k, v)?,
                "mel_bins" => m.mel_bins = parse_value(line, k, v)?,
                "patch" => m.patch = parse_value(line, k, v)?,
                "patch_window_frames" => m.patch_window_frames = parse_value(line, k, v)?,
                "embed_dim" => m.embed_dim = parse_value(line, k, v)?,
                "window" => m.window = parse_value(line, k, v)?,
                "classes" => m.classes = parse_value(line, k, v)?,
                "depths" => m.depths = parse_list(line, k, v)?,
                "heads" => m.heads = parse_list(line, k, v)?,
                "mlp_ratio" => m.mlp_ratio = parse_value(line, k, v)?,
                "rel_pos_bias" => m.rel_pos_bias = parse_bool(line, k, v)?,
                "abs_pos_embed" => m.abs_pos_embed = parse_bool(line, k, v)?,
                "epochs" => t.epochs = parse_value(line, k, v)?,
                "steps_per_epoch" => t.steps_per_epoch = parse_value(line, k, v)?,
                "batch_size" => t.batch_size = parse_value(line, k, v)?,
                "base_lr" => t.base_lr = parse_value(line, k, v)?,
                "weight_decay" => t.weight_decay = parse_value(line, k, v)?,
                "mixup_alpha" => t.mixup_alpha = parse_value(line, k, v)?,
                "time_mask" => t.time_mask = parse_value(line, k, v)?,
                "freq_mask" => t.freq_mask = parse_value(line, k, v)?,
                "num_masks" => t.num_masks = parse_value(line, k, v)?,
                "avg_last" => t.avg_last = parse_value(line, k, v)?,
                "balanced" => t.balanced = parse_bool(line, k, v)?,
                "threshold" => t.threshold = parse_value(line, k, v)?,
                "min_duration" => t.min_duration = parse_value(line, k, v)?,
                "collar" => t.collar = parse_value(line, k, v)?,
                _ => {
                    return Err(CliError::Config {
                        line,
                        msg: format!("unknown key {k}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| CliError::Config {
            line: 0,
            msg: e.to_string(),
        })?;
        let t = &self.training;
        let bad = |msg: &str| {
            Err(CliError::Config {
                line: 0,
                msg: msg.to_string(),
            })
        };
        if t.epochs == 0 || t.steps_per_epoch == 0 || t.batch_size == 0 || t.avg_last == 0 {
            return bad("epochs, steps_per_epoch, batch_size and avg_last must be positive");
        }
        if !(t.base_lr > 0.0) || !(t.weight_decay >= 0.0) || !(t.mixup_alpha >= 0.0) {
            return bad("base_lr must be positive; weight_decay and mixup_alpha non-negative");
        }
        if !(t.threshold > 0.0 && t.threshold < 1.0) || !(t.collar > 0.0) || !(t.min_duration >= 0.0) {
            return bad("need 0 < threshold < 1, collar > 0, min_duration >= 0");
        }
        Ok(())
    }

    /// Canonical text form listing every key; parses back to `self`.
    pub fn echo(&self) -> String {
        let m = &self.model;
        let t = &self.training;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("sample_rate", m.sample_rate.to_string());
        kv("window_size", m.window_size.to_string());
        kv("hop_size", m.hop_size.to_string());
        kv("fmin", m.fmin.to_string());
        kv("fmax", m.fmax.to_string());
        kv("frames", m.frames.to_string());
        kv("mel_bins", m.mel_bins.to_string());
        kv("patch", m.patch.to_string());
        kv("patch_window_frames", m.patch_window_frames.to_string());
        kv("embed_dim", m.embed_dim.to_string());
        kv("window", m.window.to_string());
        kv("classes", m.classes.to_string());
        kv("depths", join(&m.depths));
        kv("heads", join(&m.heads));
        kv("mlp_ratio", m.mlp_ratio.to_string());
        kv("rel_pos_bias", m.rel_pos_bias.to_string());
        kv("abs_pos_embed", m.abs_pos_embed.to_string());
        kv("epochs", t.epochs.to_string());
        kv("steps_per_epoch", t.steps_per_epoch.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("base_lr", t.base_lr.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("mixup_alpha", t.mixup_alpha.to_string());
        kv("time_mask", t.time_mask.to_string());
        kv("freq_mask", t.freq_mask.to_string());
        kv("num_masks", t.num_masks.to_string());
        kv("avg_last", t.avg_last.to_string());
        kv("balanced", t.balanced.to_string());
        kv("threshold", t.threshold.to_string());
        kv("min_duration", t.min_duration.to_string());
        kv("collar", t.collar.to_string());
        s
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        Self::parse(&text)
    }
}
