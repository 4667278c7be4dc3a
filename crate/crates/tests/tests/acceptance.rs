//! End-to-end acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p htsat-tests --test acceptance`. Set `HTS_ACCEPTANCE` to a
//! comma-separated list of criterion numbers to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use htsat::commands::{self, EvalArgs, Task, TrainArgs};
use htsat::synth::{self, SynthOptions};
use htsat_core::gradcheck::relative_error;
use htsat_core::graph::Graph;
use htsat_core::metrics::{compute_map, event_f1, EventCounts, EventInterval};
use htsat_core::model::{
    complexity, measure_window_attention, param_count, window_attention_block, BlockIds, ComplexityQuery, LinearIds,
    NormIds, ParamId, ParamStore,
};
use htsat_core::train::{clip_loss, clip_loss_and_grads};
use htsat_core::window::WindowLayout;
use htsat_core::{HtsModel, ModelConfig, SeededRng, Tensor};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("htsat-acceptance-{}", std::process::id())).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// 1 -------------------------------------------------------------------------

fn shape_trace() -> Outcome {
    let cfg = ModelConfig::default();
    let model = HtsModel::<f32>::init(cfg.clone(), 0).map_err(|e| e.to_string())?;
    let spec = Tensor::<f32>::zeros(&[1024, 64]);
    let (_, _, out) = model.run(&spec).map_err(|e| e.to_string())?;
    let t = out.trace;
    let expected: [(&str, &[usize], &[usize]); 6] = [
        ("spectrogram", &t.spectrogram, &[1024, 64]),
        ("tokens", &t.tokens, &[4096, 96]),
        ("grid", &t.grid, &[64, 64, 96]),
        ("final grid", &t.final_grid, &[8, 8, 768]),
        ("presence", &t.presence, &[32, 527]),
        ("clip", &t.clip, &[527]),
    ];
    for (name, got, want) in expected {
        ensure(got == want, || format!("{name}: got {got:?}, want {want:?}"))?;
    }
    Ok("(1024,64) -> 4096x96 -> 64x64x96 -> 8x8x768 -> 32x527 -> 527".into())
}

// 2 -------------------------------------------------------------------------

fn parameter_counts() -> Outcome {
    let cfg = ModelConfig::default();
    let pc = param_count(&cfg);
    ensure((27_000_000..=31_000_000).contains(&pc.encoder), || {
        format!("encoder {} outside [27M, 31M]", pc.encoder)
    })?;
    // closed form: C · 8D · 3 · F/(8P) + C
    let head = 527 * 768 * 3 * 2 + 527;
    ensure(pc.head == 2_428_943 && pc.head == head, || format!("head {}", pc.head))?;
    let gap = 31_000_000.0 - 28_800_000.0;
    let rel = (pc.head as f64 - gap).abs() / gap;
    ensure(rel <= 0.15, || format!("head differs from the 2.2M gap by {:.1}%", rel * 100.0))?;
    let model = HtsModel::<f32>::zeroed(cfg).map_err(|e| e.to_string())?;
    ensure(model.encoder_param_count() == pc.encoder && model.head_param_count() == pc.head, || {
        format!("instantiated {} + {} vs analytic", model.encoder_param_count(), model.head_param_count())
    })?;
    Ok(format!(
        "encoder {} in [27M, 31M], head {} ({:.1}% from gap)",
        pc.encoder,
        pc.head,
        rel * 100.0
    ))
}

// 3, 4: reference global attention ------------------------------------------

/// Plain-loop multi-head self-attention over all tokens with its own MAC
/// counter. `x` is `[n, c]`, weights are `[in, out]`, `bias` is optional
/// `[heads, n, n]`.
struct GlobalAttention<'a> {
    wqkv: &'a [f64],
    bqkv: &'a [f64],
    wproj: &'a [f64],
    bproj: &'a [f64],
    heads: usize,
}

#[derive(Default, Debug)]
struct GlobalMacs {
    projection: u64,
    scores: u64,
    mix: u64,
}

fn dense(x: &[f64], n: usize, w: &[f64], b: &[f64], din: usize, dout: usize, macs: &mut u64) -> Vec<f64> {
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        for o in 0..dout {
            let mut acc = if b.is_empty() { 0.0 } else { b[o] };
            for k in 0..din {
                acc += x[i * din + k] * w[k * dout + o];
            }
            y[i * dout + o] = acc;
        }
    }
    *macs += (n * din * dout) as u64;
    y
}

impl GlobalAttention<'_> {
    fn run(&self, x: &[f64], n: usize, c: usize, bias: Option<&[f64]>, macs: &mut GlobalMacs) -> Vec<f64> {
        let mut proj = 0;
        let qkv = dense(x, n, self.wqkv, self.bqkv, c, 3 * c, &mut proj);
        let d = c / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut o = vec![0.0; n * c];
        let mut row = vec![0.0; n];
        for h in 0..self.heads {
            let q = |i: usize, e: usize| qkv[i * 3 * c + h * d + e];
            let k = |i: usize, e: usize| qkv[i * 3 * c + c + h * d + e];
            let v = |i: usize, e: usize| qkv[i * 3 * c + 2 * c + h * d + e];
            for i in 0..n {
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    let mut s = 0.0;
                    for e in 0..d {
                        s += q(i, e) * scale * k(j, e);
                    }
                    if let Some(b) = bias {
                        s += b[(h * n + i) * n + j];
                    }
                    row[j] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    z += *r;
                }
                for e in 0..d {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += row[j] / z * v(j, e);
                    }
                    o[i * c + h * d + e] = acc;
                }
            }
        }
        macs.scores += (n * n * c) as u64;
        macs.mix += (n * n * c) as u64;
        let out = dense(&o, n, self.wproj, self.bproj, c, c, &mut proj);
        macs.projection += proj;
        out
    }
}

fn complexity_accounting() -> Outcome {
    let configs = [
        (64, 64, 96, 8, 4),
        (32, 32, 48, 4, 2),
        (16, 8, 24, 4, 3),
        (8, 8, 16, 8, 2),
        (24, 12, 32, 6, 4),
        (16, 16, 64, 2, 1),
    ];
    let mut lines = Vec::new();
    for (f, t, dim, window, heads) in configs {
        let q = ComplexityQuery { f, t, dim, window };
        let c = complexity(q).map_err(|e| e.to_string())?;
        let (ft, d, m2) = ((f * t) as u128, dim as u128, (window * window) as u128);
        ensure(c.windowed == (ft * d * d, m2 * ft * d), || format!("{q:?}: windowed terms {:?}", c.windowed))?;
        ensure(c.global == (ft * d * d, ft * ft * d), || format!("{q:?}: global terms {:?}", c.global))?;
        ensure(c.ratio == ft / m2 && c.global.1 == c.ratio * c.windowed.1, || format!("{q:?}: ratio {}", c.ratio))?;
        let w = measure_window_attention(q, heads, 1).map_err(|e| e.to_string())?;
        let first = c.windowed.0 as u64;
        let second = c.windowed.1 as u64;
        ensure(w.qkv == 3 * first && w.output == first, || format!("{q:?}: projection MACs {w:?}"))?;
        ensure(w.scores == second && w.mix == second, || format!("{q:?}: attention MACs {w:?}"))?;

        let mut rng = SeededRng::new(2);
        let n = f * t;
        let mut rnd = |len: usize| (0..len).map(|_| rng.normal() * 0.1).collect::<Vec<f64>>();
        let (wqkv, wproj, x) = (rnd(dim * 3 * dim), rnd(dim * dim), rnd(n * dim));
        let global = GlobalAttention {
            wqkv: &wqkv,
            bqkv: &[],
            wproj: &wproj,
            bproj: &[],
            heads,
        };
        let mut gm = GlobalMacs::default();
        global.run(&x, n, dim, None, &mut gm);
        ensure(gm.projection == 4 * c.global.0 as u64, || format!("{q:?}: global projections {}", gm.projection))?;
        ensure(gm.scores == c.global.1 as u64 && gm.mix == c.global.1 as u64, || {
            format!("{q:?}: global attention MACs {gm:?}")
        })?;
        ensure(gm.scores == (c.ratio as u64) * w.scores, || format!("{q:?}: measured ratio"))?;
        lines.push(format!("{f}x{t} D={dim} M={window}: ratio {}", c.ratio));
    }
    ensure(lines[0].ends_with("ratio 64"), || lines[0].clone())?;
    ensure(lines[3].ends_with("ratio 1"), || lines[3].clone())?;
    Ok(format!("{} configs exact; {}", lines.len(), lines[0]))
}

fn layer_norm_ref(x: &[f64], c: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (i, row) in x.chunks(c).enumerate() {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for k in 0..c {
            out[i * c + k] = (row[k] - mean) * inv * gamma[k] + beta[k];
        }
    }
    out
}

fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + libm_erf(x / std::f64::consts::SQRT_2))
}

/// Double-precision erf: Maclaurin series near zero, continued fraction beyond.
fn libm_erf(x: f64) -> f64 {
    if x.abs() < 3.0 {
        // Maclaurin series
        let mut sum = 0.0;
        let mut term = x;
        let mut n = 0.0;
        loop {
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() < 1e-17 {
                break;
            }
            n += 1.0;
            term *= -x * x / n;
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        // Lentz continued fraction for erfc
        let a = x.abs();
        let mut f = a;
        let mut c = a;
        let mut d = 0.0;
        for k in 1..200 {
            let kk = k as f64 / 2.0;
            d = a + kk * d;
            d = 1.0 / d;
            c = a + kk / c;
            f *= c * d;
        }
        let erfc = (-a * a).exp() / (f * std::f64::consts::PI.sqrt());
        (1.0 - erfc).copysign(x)
    }
}

fn window_global_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for draw in 0..20u64 {
        let mut rng = SeededRng::new(100 + draw);
        let m = [2usize, 3, 4][draw as usize % 3];
        let heads = [1usize, 2, 4][(draw as usize / 3) % 3];
        let c = 8 * heads;
        let hidden = 4 * c;
        let n = m * m;
        let mut rnd = |len: usize, s: f64| (0..len).map(|_| rng.normal() * s).collect::<Vec<f64>>();
        let span = 2 * m - 1;
        let (g1, b1, g2, b2) = (rnd(c, 0.3), rnd(c, 0.3), rnd(c, 0.3), rnd(c, 0.3));
        let (wqkv, bqkv, table) = (rnd(c * 3 * c, 0.3), rnd(3 * c, 0.1), rnd(span * span * heads, 0.5));
        let (wproj, bproj) = (rnd(c * c, 0.3), rnd(c, 0.1));
        let (w1, bb1, w2, bb2) = (rnd(c * hidden, 0.2), rnd(hidden, 0.1), rnd(hidden * c, 0.2), rnd(c, 0.1));
        let x = rnd(n * c, 1.0);
        let g1 = g1.iter().map(|v| v + 1.0).collect::<Vec<_>>();
        let g2 = g2.iter().map(|v| v + 1.0).collect::<Vec<_>>();

        let mut store = ParamStore::<f64>::new();
        let mut push = |name: &str, shape: &[usize], v: &[f64]| store.push(name, Tensor::new(shape, v.to_vec()).unwrap());
        let ids = BlockIds {
            norm1: NormIds {
                gamma: push("g1", &[c], &g1),
                beta: push("b1", &[c], &b1),
            },
            qkv: LinearIds {
                weight: push("qkv.w", &[c, 3 * c], &wqkv),
                bias: Some(push("qkv.b", &[3 * c], &bqkv)),
            },
            rel_table: Some(push("table", &[span * span, heads], &table)),
            proj: LinearIds {
                weight: push("proj.w", &[c, c], &wproj),
                bias: Some(push("proj.b", &[c], &bproj)),
            },
            norm2: NormIds {
                gamma: push("g2", &[c], &g2),
                beta: push("b2", &[c], &b2),
            },
            fc1: LinearIds {
                weight: push("fc1.w", &[c, hidden], &w1),
                bias: Some(push("fc1.b", &[hidden], &bb1)),
            },
            fc2: LinearIds {
                weight: push("fc2.w", &[hidden, c], &w2),
                bias: Some(push("fc2.b", &[c], &bb2)),
            },
        };
        let layout = WindowLayout::new(m, m, m, 0).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let vars = store.attach(&mut g);
        let xv = g.constant(Tensor::new(&[m, m, c], x.clone()).unwrap());
        let y = window_attention_block(&mut g, xv, &ids, &vars, &layout, heads, None, None).map_err(|e| e.to_string())?;
        let got = g.value(y).data().to_vec();

        // reference: relative bias from coordinate differences
        let mut bias = vec![0.0; heads * n * n];
        for h in 0..heads {
            for i in 0..n {
                for j in 0..n {
                    let (ri, ci) = ((i / m) as isize, (i % m) as isize);
                    let (rj, cj) = ((j / m) as isize, (j % m) as isize);
                    let idx = ((ri - rj + m as isize - 1) as usize) * span + (ci - cj + m as isize - 1) as usize;
                    bias[(h * n + i) * n + j] = table[idx * heads + h];
                }
            }
        }
        let attn = GlobalAttention {
            wqkv: &wqkv,
            bqkv: &bqkv,
            wproj: &wproj,
            bproj: &bproj,
            heads,
        };
        let h1 = layer_norm_ref(&x, c, &g1, &b1);
        let a = attn.run(&h1, n, c, Some(&bias), &mut GlobalMacs::default());
        let x1: Vec<f64> = x.iter().zip(&a).map(|(p, q)| p + q).collect();
        let h2 = layer_norm_ref(&x1, c, &g2, &b2);
        let mut sink = 0;
        let f1: Vec<f64> = dense(&h2, n, &w1, &bb1, c, hidden, &mut sink).into_iter().map(gelu_ref).collect();
        let f2 = dense(&f1, n, &w2, &bb2, hidden, c, &mut sink);
        for k in 0..n * c {
            let want = x1[k] + f2[k];
            worst = worst.max((got[k] - want).abs());
        }
    }
    ensure(worst < 1e-5, || format!("max elementwise difference {worst:e}"))?;
    Ok(format!("20 draws, max elementwise difference {worst:.2e}"))
}

// 5 -------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let cfg = ModelConfig::tiny();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..10u64 {
        let mut model = HtsModel::<f64>::init(cfg.clone(), seed).map_err(|e| e.to_string())?;
        let mut rng = SeededRng::new(1000 + seed);
        // move zero-initialized tensors off zero so their gradients do not vanish
        for t in model.params.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.normal() * 0.02;
            }
        }
        let spec = Tensor::from_fn(&[cfg.frames, cfg.mel_bins], |_| rng.normal());
        let target = Tensor::from_fn(&[cfg.classes], |_| if rng.uniform() < 0.3 { 1.0 } else { 0.0 });
        let (_, grads) = clip_loss_and_grads(&model, &spec, &target).map_err(|e| e.to_string())?;
        for p in 0..model.params.len() {
            let id = ParamId(p);
            let j = rng.below(model.params.get(id).len());
            let orig = model.params.get(id).data()[j];
            model.params.get_mut(id).data_mut()[j] = orig + step;
            let up = clip_loss(&model, &spec, &target).map_err(|e| e.to_string())?;
            model.params.get_mut(id).data_mut()[j] = orig - step;
            let down = clip_loss(&model, &spec, &target).map_err(|e| e.to_string())?;
            model.params.get_mut(id).data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * step);
            let analytic = grads[p].data()[j];
            let err = relative_error(analytic, fd);
            if err >= 1e-4 {
                return Err(format!(
                    "seed {seed} {}[{j}]: analytic {analytic:e} vs fd {fd:e} (rel {err:e})",
                    model.params.name(id)
                ));
            }
            worst = worst.max(err);
            checked += 1;
        }
    }
    Ok(format!("{checked} coordinates (one per tensor, 10 seeds), max relative error {worst:.2e}"))
}

// 6 -------------------------------------------------------------------------

fn shifted_window_mask() -> Outcome {
    let (size, m) = (64, 8);
    let layout = WindowLayout::new(size, size, m, m / 2).map_err(|e| e.to_string())?;
    let mask = layout.mask::<f64>().ok_or("shifted layout produced no mask")?;
    let n = layout.tokens();
    let d = 8;
    let mut rng = SeededRng::new(6);
    let mut worst: f64 = 0.0;
    let mut masked_pairs = 0usize;
    let mut g = Graph::<f64>::new();
    let scores = Tensor::from_fn(&[layout.count(), n, n], |_| 0.0);
    let mut data = scores.into_data();
    for w in 0..layout.count() {
        let q: Vec<f64> = (0..n * d).map(|_| rng.normal() * 3.0).collect();
        let k: Vec<f64> = (0..n * d).map(|_| rng.normal() * 3.0).collect();
        for a in 0..n {
            for b in 0..n {
                let s: f64 = (0..d).map(|e| q[a * d + e] * k[b * d + e]).sum::<f64>() / (d as f64).sqrt();
                data[(w * n + a) * n + b] = s + mask.data()[(w * n + a) * n + b];
            }
        }
    }
    let sv = g.constant(Tensor::new(&[layout.count(), n, n], data).unwrap());
    let probs = g.softmax(sv);
    let p = g.value(probs).data();
    for w in 0..layout.count() {
        for a in 0..n {
            let mut mass = 0.0;
            for b in 0..n {
                let (ra, ca) = layout.source(w, a);
                let (rb, cb) = layout.source(w, b);
                // tokens brought together by the cyclic roll sit ≥ M apart
                let across = ra.abs_diff(rb) >= m || ca.abs_diff(cb) >= m;
                let masked = mask.data()[(w * n + a) * n + b] < 0.0;
                ensure(across == masked, || format!("window {w}: pair ({a},{b}) masked={masked} across={across}"))?;
                if across {
                    mass += p[(w * n + a) * n + b];
                    masked_pairs += 1;
                }
            }
            worst = worst.max(mass);
        }
    }
    ensure(worst < 1e-6, || format!("masked attention mass {worst:e}"))?;
    Ok(format!(
        "{} windows, {masked_pairs} masked pairs, max masked mass {worst:.1e}",
        layout.count()
    ))
}

// 7, 10 ---------------------------------------------------------------------

const OVERFIT_CONFIG: &str = "\
# tiny model, no augmentation, 6 x 50 = 300 steps
preset = tiny
epochs = 6
steps_per_epoch = 50
batch_size = 8
base_lr = 0.01
mixup_alpha = 0
time_mask = 0
freq_mask = 0
avg_last = 1
balanced = false
";

fn overfit_data(dir: &Path) -> PathBuf {
    let opts = SynthOptions {
        n_clips: 8,
        n_classes: 8,
        seed: 1,
        duration: ModelConfig::tiny().clip_seconds(),
        min_events: 1,
        max_events: 1,
        min_event_seconds: 0.8,
        max_event_seconds: 2.0,
        ..SynthOptions::default()
    };
    synth::generate(dir, &opts).unwrap()
}

fn train_overfit(dir: &Path, manifest: &Path) -> Result<PathBuf, String> {
    let config = dir.join("overfit.conf");
    std::fs::write(&config, OVERFIT_CONFIG).unwrap();
    let args = TrainArgs {
        config: Some(config),
        manifest: manifest.to_path_buf(),
        out: dir.join("run"),
        seed: 7,
    };
    let summary = commands::train(&args, &mut std::io::sink()).map_err(|e| e.to_string())?;
    Ok(summary.final_checkpoint)
}

struct OverfitRun {
    manifest: PathBuf,
    checkpoint: PathBuf,
}

fn overfit(state: &mut Option<OverfitRun>) -> Outcome {
    let dir = scratch_dir("overfit-a");
    let manifest = overfit_data(&dir.join("data"));
    let checkpoint = train_overfit(&dir, &manifest)?;
    let args = EvalArgs {
        checkpoint: checkpoint.clone(),
        manifest: manifest.clone(),
        task: Task::Clip,
        out: None,
        threshold: None,
        collar: None,
    };
    let report = commands::eval(&args, &mut std::io::sink()).map_err(|e| e.to_string())?;
    *state = Some(OverfitRun { manifest, checkpoint });
    let bce = report.get("bce").ok_or("no bce")?;
    let acc = report.get("accuracy").ok_or("no accuracy")?;
    ensure(bce < 0.05 && acc == 1.0, || format!("bce {bce:.4}, accuracy {acc}"))?;
    Ok(format!("300 steps: train bce {bce:.5}, accuracy {acc}"))
}

fn determinism(state: &Option<OverfitRun>) -> Outcome {
    let dir = scratch_dir("overfit-b");
    let (manifest, first) = match state {
        Some(r) => (r.manifest.clone(), r.checkpoint.clone()),
        None => {
            let manifest = overfit_data(&dir.join("data-a"));
            let first = train_overfit(&dir.join("a"), &manifest)?;
            (manifest, first)
        }
    };
    let second = train_overfit(&dir, &manifest)?;
    let a = std::fs::read(&first).map_err(|e| e.to_string())?;
    let b = std::fs::read(&second).map_err(|e| e.to_string())?;
    ensure(a == b, || format!("{} and {} differ", first.display(), second.display()))?;
    Ok(format!("two --seed 7 runs give identical {}-byte checkpoints", a.len()))
}

// 8 -------------------------------------------------------------------------

// standard augmentation, time mask scaled to the 256-frame input
const LOCALIZATION_CONFIG: &str = "\
preset = tiny
epochs = 10
steps_per_epoch = 50
batch_size = 8
base_lr = 0.01
mixup_alpha = 0.5
time_mask = 32
freq_mask = 16
avg_last = 3
balanced = true
";

fn localization() -> Outcome {
    let dir = scratch_dir("localization");
    let base = SynthOptions {
        n_classes: 8,
        duration: ModelConfig::tiny().clip_seconds(),
        ..SynthOptions::default()
    };
    let train = synth::generate(&dir.join("train"), &SynthOptions { n_clips: 64, seed: 101, ..base.clone() })
        .map_err(|e| e.to_string())?;
    let test = synth::generate(&dir.join("test"), &SynthOptions { n_clips: 32, seed: 202, ..base })
        .map_err(|e| e.to_string())?;
    // the training manifest keeps its event columns, but training only reads labels
    let config = dir.join("loc.conf");
    std::fs::write(&config, LOCALIZATION_CONFIG).unwrap();
    let summary = commands::train(
        &TrainArgs {
            config: Some(config),
            manifest: train,
            out: dir.join("run"),
            seed: 3,
        },
        &mut std::io::sink(),
    )
    .map_err(|e| e.to_string())?;
    let eval = |task| EvalArgs {
        checkpoint: summary.final_checkpoint.clone(),
        manifest: test.clone(),
        task,
        out: Some(dir.join("eval")),
        threshold: None,
        collar: Some(0.2),
    };
    let clip = commands::eval(&eval(Task::Clip), &mut std::io::sink()).map_err(|e| e.to_string())?;
    let events = commands::eval(&eval(Task::Event), &mut std::io::sink()).map_err(|e| e.to_string())?;
    let f1 = events.get("event_f1").ok_or("no event_f1")?;
    let map = clip.get("mAP").unwrap_or(f64::NAN);
    let detail = format!("held-out event F1 {f1:.3} (collar 0.2 s), clip mAP {map:.3}");
    ensure(f1 >= 0.6, || detail.clone())?;
    Ok(detail)
}

// 9 -------------------------------------------------------------------------

fn brute_force_ap(scores: &[f32], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let ahead = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut terms: Vec<(usize, usize)> = (0..n)
        .filter(|&i| labels[i])
        .map(|i| {
            let rank = 1 + (0..n).filter(|&j| ahead(j, i)).count();
            let hits = 1 + (0..n).filter(|&j| labels[j] && ahead(j, i)).count();
            (rank, hits)
        })
        .collect();
    if terms.is_empty() {
        return None;
    }
    terms.sort();
    let total: f64 = terms.iter().map(|&(r, h)| h as f64 / r as f64).sum();
    Some(total / terms.len() as f64)
}

fn ev(class_id: usize, onset: f64, offset: f64) -> EventInterval {
    EventInterval { class_id, onset, offset }
}

fn metric_oracles() -> Outcome {
    let mut rng = SeededRng::new(9);
    let mut done = 0;
    while done < 200 {
        let n = 2 + rng.below(40);
        let c = 1 + rng.below(6);
        let scores: Vec<Vec<f32>> = (0..n).map(|_| (0..c).map(|_| rng.below(8) as f32 / 7.0).collect()).collect();
        let labels: Vec<Vec<bool>> = (0..n).map(|_| (0..c).map(|_| rng.uniform() < 0.3).collect()).collect();
        let per: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let s: Vec<f32> = scores.iter().map(|r| r[k]).collect();
                let l: Vec<bool> = labels.iter().map(|r| r[k]).collect();
                brute_force_ap(&s, &l)
            })
            .collect();
        let valid: Vec<f64> = per.iter().flatten().copied().collect();
        if valid.is_empty() {
            ensure(compute_map(&scores, &labels).is_err(), || "all-negative instance accepted".into())?;
            continue;
        }
        let report = compute_map(&scores, &labels).map_err(|e| e.to_string())?;
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        ensure(report.per_class == per && report.mean == mean, || {
            format!("instance {done}: {:?} vs {per:?}", report.per_class)
        })?;
        done += 1;
    }

    // (pred, gold, classes, expected per-class counts, expected average F1)
    type Fixture = (Vec<EventInterval>, Vec<EventInterval>, usize, Vec<EventCounts>, f64);
    let counts = |tp, fp, fn_| EventCounts { tp, fp, fn_ };
    let fixtures: Vec<Fixture> = vec![
        (vec![ev(0, 1.0, 2.0)], vec![ev(0, 1.0, 2.0)], 1, vec![counts(1, 0, 0)], 1.0),
        (vec![], vec![ev(0, 1.0, 2.0)], 1, vec![counts(0, 0, 1)], 0.0),
        (
            vec![ev(0, 1.1, 2.1)],
            vec![ev(0, 1.0, 2.0), ev(0, 4.0, 5.0)],
            1,
            vec![counts(1, 0, 1)],
            2.0 / 3.0,
        ),
        // onset 0.25 s late: outside the collar
        (vec![ev(0, 1.25, 2.0)], vec![ev(0, 1.0, 2.0)], 1, vec![counts(0, 1, 1)], 0.0),
        // 5 s event: offset tolerance 1 s
        (vec![ev(0, 0.0, 5.9)], vec![ev(0, 0.0, 5.0)], 1, vec![counts(1, 0, 0)], 1.0),
        // two predictions for one gold event: one is a false positive
        (
            vec![ev(1, 0.0, 1.0), ev(1, 0.1, 1.1)],
            vec![ev(1, 0.0, 1.0)],
            2,
            vec![counts(0, 0, 0), counts(1, 1, 0)],
            2.0 / 3.0,
        ),
        // class 0 perfect, class 1 missed, class 2 spurious: F1s 1, 0, 0
        (
            vec![ev(0, 0.0, 1.0), ev(2, 3.0, 4.0)],
            vec![ev(0, 0.0, 1.0), ev(1, 2.0, 3.0)],
            4,
            vec![counts(1, 0, 0), counts(0, 0, 1), counts(0, 1, 0), counts(0, 0, 0)],
            1.0 / 3.0,
        ),
    ];
    for (i, (pred, gold, classes, want_counts, want_f1)) in fixtures.iter().enumerate() {
        let r = event_f1(pred, gold, 0.2, *classes).map_err(|e| e.to_string())?;
        ensure(&r.counts == want_counts, || format!("fixture {i}: counts {:?}", r.counts))?;
        ensure((r.average - want_f1).abs() < 1e-12, || format!("fixture {i}: F1 {}", r.average))?;
    }
    Ok(format!("200 random mAP instances exact; {} event-F1 fixtures exact", fixtures.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("HTS_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |k: usize| selected.as_ref().is_none_or(|s| s.contains(&k));
    let mut overfit_state: Option<OverfitRun> = None;
    let mut failures = 0;
    let mut report = |k: usize, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(k) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(d), Some(l)) if elapsed > l => Err(format!("{d}; took {elapsed:.1?}, limit {l:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {k:>2} {tag} {name}: {detail} [{elapsed:.1?}]");
    };
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    report(1, "shape trace", min(1), &mut shape_trace);
    report(2, "parameter counts", None, &mut parameter_counts);
    report(3, "complexity accounting", None, &mut complexity_accounting);
    report(4, "window/global equivalence", None, &mut window_global_equivalence);
    report(5, "gradient correctness", min(10), &mut gradient_check);
    report(6, "shifted-window mask", None, &mut shifted_window_mask);
    report(7, "overfit oracle", min(15), &mut || overfit(&mut overfit_state));
    report(8, "weak-label localization", min(60), &mut localization);
    report(9, "metric oracles", None, &mut metric_oracles);
    report(10, "determinism", None, &mut || determinism(&overfit_state));
    let _ = std::fs::remove_dir_all(std::env::temp_dir().join(format!("htsat-acceptance-{}", std::process::id())));
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
