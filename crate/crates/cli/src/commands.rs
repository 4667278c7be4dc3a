//! The `train`, `eval`, `infer`, `synth-data` and `complexity` commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use htsat_core::augment::{assemble_batch, BalancedSampler};
use htsat_core::dsp::MelSpectrogram;
use htsat_core::head::bce_value;
use htsat_core::metrics::{compute_accuracy, compute_map, decode_events, event_f1_clips, EventInterval};
use htsat_core::model::{complexity, measure_window_attention, ComplexityQuery, ParamStore};
use htsat_core::optim::{weight_average, LrSchedule, OptimState};
use htsat_core::rng::{stream, SeededRng};
use htsat_core::train::{average_clip_grads, clip_loss_and_grads, predict, Prediction};
use htsat_core::{HtsModel, Tensor};

use crate::audio::{read_wav, FeatureLoader};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{io_err, CliError, CoreContext, Result};
use crate::manifest::{format_seconds, Manifest};
use crate::synth::{self, SynthOptions};

/// Worker threads: `HTS_NUM_THREADS` if set, else the available cores.
pub fn num_threads() -> usize {
    std::env::var("HTS_NUM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on up to `threads` scoped threads; results keep the
/// input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Clips of a manifest with their cached features and targets.
pub struct Dataset {
    pub manifest: Manifest,
    pub specs: Vec<MelSpectrogram>,
    pub targets: Vec<Vec<f32>>,
}

impl Dataset {
    pub fn load(path: &Path, config: &RunConfig, threads: usize) -> Result<Self> {
        let manifest = Manifest::load(path, config.model.classes)?;
        let loader = FeatureLoader::new(&config.model)?;
        let specs = parallel_map(&manifest.entries, threads, |e| loader.load(&e.resolved))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let targets = manifest.entries.iter().map(|e| e.target(config.model.classes)).collect();
        Ok(Self { manifest, specs, targets })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

fn spec_tensor(s: &MelSpectrogram) -> Tensor<f32> {
    Tensor::new(&[s.n_frames, s.n_mels], s.values.clone()).expect("spectrogram extents are positive")
}

fn create_csv(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_row<W: Write>(w: &mut csv::Writer<W>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

enum IndexStream {
    Balanced(BalancedSampler),
    Uniform { rng: SeededRng, n: usize },
}

impl IndexStream {
    fn take(&mut self, k: usize) -> Vec<usize> {
        match self {
            IndexStream::Balanced(s) => s.take(k).collect(),
            IndexStream::Uniform { rng, n } => (0..k).map(|_| rng.below(*n)).collect(),
        }
    }
}

/// Trains from scratch, writing `epoch_NNN.htsc` per epoch, `final.htsc`
/// (average of the last `avg_last` epochs) and `metrics.csv`.
pub fn train(args: &TrainArgs, log: &mut dyn Write) -> Result<TrainSummary> {
    let config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::tiny(),
    };
    let t = config.training.clone();
    let threads = num_threads();
    let data = Dataset::load(&args.manifest, &config, threads)?;
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let mut model = HtsModel::<f32>::init(config.model.clone(), args.seed)?;
    let mut opt = OptimState::new(&model.params).with_weight_decay(t.weight_decay);
    let schedule = LrSchedule { base_lr: t.base_lr };
    let sampler_rng = SeededRng::with_stream(args.seed, stream::SAMPLER);
    let mut indices = if t.balanced {
        let sampler = BalancedSampler::new(&data.manifest.label_sets(), config.model.classes, sampler_rng)
            .context(format!("{}: balanced sampling", args.manifest.display()))?;
        IndexStream::Balanced(sampler)
    } else {
        IndexStream::Uniform {
            rng: sampler_rng,
            n: data.len(),
        }
    };
    let mut aug_rng = SeededRng::with_stream(args.seed, stream::AUGMENT);
    let flags = t.augment_flags();

    let metrics_path = args.out.join("metrics.csv");
    let mut metrics = create_csv(&metrics_path)?;
    csv_row(&mut metrics, &metrics_path, &["epoch".into(), "split".into(), "metric".into(), "value".into()])?;
    let mut recent: Vec<ParamStore<f32>> = Vec::new();
    let mut epoch_losses = Vec::with_capacity(t.epochs);
    for epoch in 1..=t.epochs {
        let lr = schedule.lr(epoch);
        let mut total = 0.0;
        for _ in 0..t.steps_per_epoch {
            let idx = indices.take(t.batch_size);
            let specs: Vec<MelSpectrogram> = idx.iter().map(|&i| data.specs[i].clone()).collect();
            let targets: Vec<Vec<f32>> = idx.iter().map(|&i| data.targets[i].clone()).collect();
            let batch = assemble_batch(&specs, &targets, &flags, &mut aug_rng)?;
            let rows: Vec<usize> = (0..batch.size()).collect();
            let parts = parallel_map(&rows, threads, |&i| clip_loss_and_grads(&model, &batch.spec(i), &batch.target(i)))
                .into_iter()
                .collect::<htsat_core::Result<Vec<_>>>()?;
            let (loss, grads) = average_clip_grads(parts)?;
            opt.step(&mut model.params, &grads, lr)
                .context(format!("epoch {epoch}"))?;
            total += loss;
        }
        let mean = total / t.steps_per_epoch as f64;
        epoch_losses.push(mean);
        csv_row(&mut metrics, &metrics_path, &[epoch.to_string(), "train".into(), "bce".into(), mean.to_string()])?;
        csv_row(&mut metrics, &metrics_path, &[epoch.to_string(), "train".into(), "lr".into(), lr.to_string()])?;
        writeln!(log, "epoch {epoch}: lr {lr:.3e} bce {mean:.5}").map_err(io_err("<log>"))?;
        checkpoint::save(&args.out.join(format!("epoch_{epoch:03}.htsc")), &config, &model.params)?;
        recent.push(model.params.clone());
        if recent.len() > t.avg_last {
            recent.remove(0);
        }
    }
    metrics.flush().map_err(io_err(&metrics_path))?;
    let averaged = weight_average(&recent)?;
    let final_checkpoint = args.out.join("final.htsc");
    checkpoint::save(&final_checkpoint, &config, &averaged)?;
    Ok(TrainSummary {
        final_checkpoint,
        epoch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Clip,
    Event,
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub task: Task,
    pub out: Option<PathBuf>,
    pub threshold: Option<f32>,
    pub collar: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    /// `(metric, value)` rows in output order.
    pub metrics: Vec<(String, f64)>,
    /// `(clip_id, event)` rows for the event task.
    pub events: Vec<(String, EventInterval)>,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|&(_, v)| v)
    }
}

/// Runs the model over every clip of a dataset, in manifest order.
pub fn predict_all(model: &HtsModel<f32>, data: &Dataset, threads: usize) -> Result<Vec<Prediction>> {
    parallel_map(&data.specs, threads, |s| predict(model, &spec_tensor(s)))
        .into_iter()
        .collect::<htsat_core::Result<Vec<_>>>()
        .map_err(Into::into)
}

/// Evaluates a checkpoint on a manifest and prints `epoch,split,metric,value`
/// rows to `stdout`; with `out`, also writes `metrics.csv` (and `events.csv`
/// for the event task) there.
pub fn eval(args: &EvalArgs, stdout: &mut dyn Write) -> Result<EvalReport> {
    let (config, model) = checkpoint::load(&args.checkpoint)?;
    let mut decode = config.training.decode_params();
    if let Some(th) = args.threshold {
        decode.threshold = th;
    }
    let collar = args.collar.unwrap_or(config.training.collar);
    let threads = num_threads();
    let data = Dataset::load(&args.manifest, &config, threads).map_err(|e| match e {
        CliError::Manifest { path, line, msg } if msg.starts_with("class id") => CliError::Manifest {
            path,
            line,
            msg: format!("{msg}; checkpoint config has {} classes", config.model.classes),
        },
        other => other,
    })?;
    let preds = predict_all(&model, &data, threads)?;
    let mut report = EvalReport::default();
    match args.task {
        Task::Clip => {
            let mut bce = 0.0;
            for (p, y) in preds.iter().zip(&data.targets) {
                let probs: Vec<f64> = p.clip.iter().map(|&v| v as f64).collect();
                let target: Vec<f64> = y.iter().map(|&v| v as f64).collect();
                bce += bce_value(&probs, &target)?;
            }
            report.metrics.push(("bce".into(), bce / preds.len() as f64));
            let scores: Vec<Vec<f32>> = preds.iter().map(|p| p.clip.clone()).collect();
            let labels: Vec<Vec<bool>> = data.targets.iter().map(|t| t.iter().map(|&v| v > 0.5).collect()).collect();
            if labels.iter().any(|l| l.iter().any(|&b| b)) {
                report.metrics.push(("mAP".into(), compute_map(&scores, &labels)?.mean));
            }
            if data.manifest.entries.iter().all(|e| e.labels.len() == 1) {
                let single: Vec<usize> = data.manifest.entries.iter().map(|e| e.labels[0]).collect();
                report.metrics.push(("accuracy".into(), compute_accuracy(&scores, &single)?));
            }
        }
        Task::Event => {
            let step = config.model.map_step_seconds();
            let mut pairs = Vec::with_capacity(preds.len());
            for (p, e) in preds.iter().zip(&data.manifest.entries) {
                let decoded = decode_events(&p.presence, decode, step)?;
                for ev in &decoded {
                    report.events.push((e.id(), *ev));
                }
                pairs.push((decoded, e.events.clone()));
            }
            let f1 = event_f1_clips(&pairs, collar, config.model.classes)?;
            report.metrics.push(("event_f1".into(), f1.average));
            for (k, v) in f1.per_class.iter().enumerate() {
                if let Some(v) = v {
                    report.metrics.push((format!("f1_class_{k}"), *v));
                }
            }
        }
    }
    let split = data.manifest.split_name();
    let header = "epoch,split,metric,value";
    let rows: Vec<String> = report.metrics.iter().map(|(k, v)| format!("0,{split},{k},{v}")).collect();
    let io = |e| CliError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    writeln!(stdout, "{header}").map_err(io)?;
    for r in &rows {
        writeln!(stdout, "{r}").map_err(io)?;
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(io_err(out))?;
        let path = out.join("metrics.csv");
        std::fs::write(&path, format!("{header}\n{}\n", rows.join("\n"))).map_err(io_err(&path))?;
        if args.task == Task::Event {
            let path = out.join("events.csv");
            let mut w = create_csv(&path)?;
            csv_row(&mut w, &path, &["clip_id".into(), "class".into(), "onset".into(), "offset".into()])?;
            for (id, ev) in &report.events {
                csv_row(&mut w, &path, &[id.clone(), ev.class_id.to_string(), format_seconds(ev.onset), format_seconds(ev.offset)])?;
            }
            w.flush().map_err(io_err(&path))?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub wav: PathBuf,
    pub out: PathBuf,
    pub top_k: usize,
}

/// Prints the top-k `class,prob` rows and writes the presence map as
/// `time_step,class_id,prob` rows.
pub fn infer(args: &InferArgs, stdout: &mut dyn Write) -> Result<Prediction> {
    let (config, model) = checkpoint::load(&args.checkpoint)?;
    let loader = FeatureLoader::new(&config.model)?;
    let wave = read_wav(&args.wav)?;
    let wave = loader.prepare(&wave).context(args.wav.display())?;
    let spec = htsat_core::dsp::log_mel(&wave, &config.model).context(args.wav.display())?;
    let pred = predict(&model, &spec_tensor(&spec))?;
    let mut order: Vec<usize> = (0..pred.clip.len()).collect();
    order.sort_by(|&a, &b| pred.clip[b].total_cmp(&pred.clip[a]));
    let io = |e| CliError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    writeln!(stdout, "class,prob").map_err(io)?;
    for &c in order.iter().take(args.top_k) {
        writeln!(stdout, "{c},{}", pred.clip[c]).map_err(io)?;
    }
    let mut w = create_csv(&args.out)?;
    csv_row(&mut w, &args.out, &["time_step".into(), "class_id".into(), "prob".into()])?;
    for step in 0..pred.presence.steps {
        for c in 0..pred.presence.classes {
            csv_row(&mut w, &args.out, &[step.to_string(), c.to_string(), pred.presence.at(step, c).to_string()])?;
        }
    }
    w.flush().map_err(io_err(&args.out))?;
    Ok(pred)
}

/// Writes the synthetic dataset and prints the manifest path.
pub fn synth_data(out: &Path, opts: &SynthOptions, stdout: &mut dyn Write) -> Result<PathBuf> {
    let manifest = synth::generate(out, opts)?;
    writeln!(stdout, "{}", manifest.display()).map_err(io_err("<stdout>"))?;
    Ok(manifest)
}

/// Prints analytic and measured attention costs as `term,analytic,measured`.
pub fn complexity_table(q: ComplexityQuery, heads: usize, stdout: &mut dyn Write) -> Result<()> {
    let c = complexity(q).map_err(|e| CliError::Usage(e.to_string()))?;
    let measured = if q.f.is_multiple_of(q.window) && q.t.is_multiple_of(q.window) {
        if !q.dim.is_multiple_of(heads) {
            return Err(CliError::Usage(format!("dim {} is not divisible by {heads} heads", q.dim)));
        }
        Some(measure_window_attention(q, heads, 0)?)
    } else {
        None
    };
    let m = |v: Option<u64>| v.map_or("n/a".to_string(), |x| x.to_string());
    let rows = [
        ("global_projection", c.global.0.to_string(), "n/a".to_string()),
        ("global_attention", c.global.1.to_string(), "n/a".to_string()),
        ("window_projection", c.windowed.0.to_string(), m(measured.map(|a| a.per_projection()))),
        ("window_scores", c.windowed.1.to_string(), m(measured.map(|a| a.scores))),
        ("window_mix", c.windowed.1.to_string(), m(measured.map(|a| a.mix))),
        ("ratio", c.ratio.to_string(), "n/a".to_string()),
    ];
    let io = io_err("<stdout>");
    let mut text = String::from("term,analytic,measured\n");
    for (k, a, b) in rows {
        text.push_str(&format!("{k},{a},{b}\n"));
    }
    stdout.write_all(text.as_bytes()).map_err(io)
}
