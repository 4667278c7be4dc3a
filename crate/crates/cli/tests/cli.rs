use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use htsat::audio::{read_wav, write_wav, FeatureLoader};
use htsat::checkpoint;
use htsat::synth::{self, SynthOptions};
use htsat::RunConfig;
use htsat_core::dsp::{mel_filterbank, Waveform};
use htsat_core::{HtsModel, ModelConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_htsat"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("htsat-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn small_synth(dir: &Path, seed: u64) -> PathBuf {
    let opts = SynthOptions {
        n_clips: 3,
        seed,
        duration: 2.0,
        ..SynthOptions::default()
    };
    synth::generate(dir, &opts).unwrap()
}

#[test]
fn missing_manifest_names_the_path() {
    let dir = scratch("missing");
    let manifest = dir.join("nope.csv");
    let out = run(bin()
        .args(["train", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(dir.join("run")));
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("nope.csv"), "{}", text(&out.stderr));
}

#[test]
fn empty_manifest_is_rejected() {
    let dir = scratch("empty");
    let manifest = dir.join("manifest.csv");
    std::fs::write(&manifest, "path,labels\n").unwrap();
    let out = run(bin()
        .args(["train", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(dir.join("run")));
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("error"));
}

#[test]
fn manifest_with_missing_audio_is_rejected() {
    let dir = scratch("missing-audio");
    let manifest = dir.join("manifest.csv");
    std::fs::write(&manifest, "path,labels\ngone.wav,0\n").unwrap();
    let out = run(bin()
        .args(["train", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(dir.join("run")));
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("gone.wav"), "{}", text(&out.stderr));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = scratch("synth-a");
    let b = scratch("synth-b");
    let c = scratch("synth-c");
    small_synth(&a, 5);
    small_synth(&b, 5);
    small_synth(&c, 6);
    for name in ["clip_0000.wav", "clip_0001.wav", "clip_0002.wav", "manifest.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
        if name.ends_with(".wav") {
            assert_ne!(x, std::fs::read(c.join(name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn synth_command_writes_manifest() {
    let dir = scratch("synth-cmd");
    let out = run(bin()
        .args(["synth-data", "--n-clips", "2", "--duration", "1.5", "--seed", "3", "--out"])
        .arg(&dir));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let manifest = std::fs::read_to_string(dir.join("manifest.csv")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines[0], "path,labels,events");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("clip_0000.wav,"));
}

#[test]
fn tone_bursts_put_a_ridge_at_the_class_frequency() {
    let cfg = ModelConfig::default();
    let opts = SynthOptions {
        n_clips: 6,
        seed: 11,
        duration: 4.0,
        min_events: 1,
        max_events: 1,
        min_event_seconds: 1.0,
        max_event_seconds: 2.0,
        ..SynthOptions::default()
    };
    let dir = scratch("ridge");
    let manifest = synth::generate(&dir, &opts).unwrap();
    let data = htsat::manifest::Manifest::load(&manifest, opts.n_classes).unwrap();
    let bank = mel_filterbank(cfg.window_size, cfg.mel_bins, cfg.sample_rate, cfg.fmin, cfg.fmax).unwrap();
    let loader = FeatureLoader::new(&cfg).unwrap();
    for entry in &data.entries {
        let spec = loader.load(&entry.resolved).unwrap();
        let e = entry.events[0];
        let f = synth::class_frequency(e.class_id, opts.n_classes);
        let nearest = (0..cfg.mel_bins)
            .min_by(|&a, &b| (bank.center_hz(a) - f).abs().total_cmp(&(bank.center_hz(b) - f).abs()))
            .unwrap();
        let first = ((e.onset + 0.1) / spec.hop_seconds).ceil() as usize;
        let last = ((e.offset - 0.1) / spec.hop_seconds).floor() as usize;
        for t in first..=last {
            let row = spec.frame(t);
            let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!(peak.abs_diff(nearest) <= 1, "{}: frame {t} peaks at {peak}, expected {nearest}", entry.path);
        }
    }
}

#[test]
fn wav_round_trip_is_close() {
    let dir = scratch("wav");
    let w = Waveform::new((0..800).map(|i| (i as f32 / 800.0) - 0.5).collect(), 16_000).unwrap();
    let path = dir.join("x.wav");
    write_wav(&path, &w).unwrap();
    let r = read_wav(&path).unwrap();
    assert_eq!(r.sample_rate, 16_000);
    assert_eq!(r.samples.len(), 800);
    for (a, b) in w.samples.iter().zip(&r.samples) {
        assert!((a - b).abs() < 1.0 / 16_000.0);
    }
}

#[test]
fn infer_repeats_short_clips_and_writes_the_presence_map() {
    let dir = scratch("infer");
    let config = RunConfig::tiny();
    let model = HtsModel::<f32>::init(config.model.clone(), 0).unwrap();
    let ckpt = dir.join("model.htsc");
    checkpoint::save(&ckpt, &config, &model.params).unwrap();
    let wav = dir.join("short.wav");
    let sr = config.model.sample_rate;
    let tone = (0..sr).map(|i| 0.2 * (i as f32 * 0.05).sin()).collect();
    write_wav(&wav, &Waveform::new(tone, sr).unwrap()).unwrap();
    let presence = dir.join("presence.csv");
    let out = run(bin()
        .arg("infer")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--wav")
        .arg(&wav)
        .arg("--out")
        .arg(&presence)
        .args(["--top-k", "3"]));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows[0], "class,prob");
    assert_eq!(rows.len(), 4);
    let probs: Vec<f32> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(probs.windows(2).all(|p| p[0] >= p[1]));
    let csv = std::fs::read_to_string(&presence).unwrap();
    let steps = config.model.frames / (8 * config.model.patch);
    assert_eq!(csv.lines().count(), 1 + steps * config.model.classes);
    assert_eq!(csv.lines().next().unwrap(), "time_step,class_id,prob");
}

#[test]
fn complexity_command_prints_the_table() {
    let out = run(bin().args(["complexity", "--f", "64", "--t", "64", "--dim", "96", "--window", "8", "--heads", "3"]));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.starts_with("term,analytic,measured\n"));
    let proj = 64u64 * 64 * 96 * 96;
    let attn = 64u64 * 64 * 64 * 96;
    assert!(stdout.contains(&format!("window_projection,{proj},{proj}")));
    assert!(stdout.contains(&format!("window_scores,{attn},{attn}")));
    assert!(stdout.contains("ratio,64,n/a"));
}

#[test]
fn complexity_rejects_indivisible_windows() {
    let out = run(bin().args(["complexity", "--f", "10", "--t", "10", "--dim", "8", "--window", "3"]));
    assert!(!out.status.success());
}

#[test]
fn config_echo_round_trips_through_a_file() {
    let dir = scratch("config");
    let mut cfg = RunConfig::tiny();
    cfg.training.epochs = 3;
    cfg.training.base_lr = 0.002;
    let path = dir.join("run.conf");
    std::fs::write(&path, cfg.echo()).unwrap();
    let back = RunConfig::load(&path).unwrap();
    assert_eq!(back.echo(), cfg.echo());
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = scratch("corrupt");
    let ckpt = dir.join("bad.htsc");
    std::fs::write(&ckpt, b"HTSC not really").unwrap();
    let manifest = small_synth(&dir.join("data"), 1);
    let out = run(bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--manifest")
        .arg(&manifest));
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("error"));
}
