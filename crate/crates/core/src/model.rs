//! The hierarchical encoder: patch embedding, groups of (shifted) window
//! attention blocks with patch merging between groups, and the
//! token-semantic head on top.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::{ModelConfig, StageGeometry};
use crate::error::{invalid, mismatch, Result};
use crate::graph::{Graph, Var};
use crate::head;
use crate::real::Real;
use crate::rng::{stream, SeededRng};
use crate::tensor::Tensor;
use crate::tokenizer::{self, expand_rows, TokenGrid};
use crate::window::{relative_position_index, WindowLayout};

/// Standard deviation of the truncated-normal weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Registers every parameter as a trainable leaf, in store order.
    pub fn attach(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.names != other.names {
            return Err(invalid("param_store", "parameter names differ"));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(mismatch("param_store", a.shape(), b.shape()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

/// Parameters of one window-attention block.
#[derive(Debug, Clone, Copy)]
pub struct BlockIds {
    pub norm1: NormIds,
    pub qkv: LinearIds,
    pub rel_table: Option<ParamId>,
    pub proj: LinearIds,
    pub norm2: NormIds,
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub struct MergeIds {
    pub norm: NormIds,
    pub reduction: ParamId,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub patch_weight: ParamId,
    pub patch_bias: ParamId,
    pub patch_norm: NormIds,
    pub abs_pos: Option<ParamId>,
    pub stages: Vec<Vec<BlockIds>>,
    pub merges: Vec<MergeIds>,
    pub final_norm: NormIds,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

/// Per-block attention geometry, precomputed once per model.
#[derive(Debug, Clone)]
struct BlockPlan<T> {
    layout: WindowLayout,
    heads: usize,
    mask: Option<Tensor<T>>,
}

/// Multiply-accumulates spent in one window-attention module.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttentionMacs {
    /// Q, K and V projections together.
    pub qkv: u64,
    /// `Q·Kᵀ` inside every window.
    pub scores: u64,
    /// `softmax(·)·V` inside every window.
    pub mix: u64,
    /// Output projection.
    pub output: u64,
}

impl AttentionMacs {
    /// MACs of one `D × D` projection, `f·t·D²`.
    pub fn per_projection(&self) -> u64 {
        self.output
    }
}

/// Shapes observed along one forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShapeTrace {
    pub spectrogram: Vec<usize>,
    pub tokens: Vec<usize>,
    pub grid: Vec<usize>,
    pub stages: Vec<Vec<usize>>,
    pub final_grid: Vec<usize>,
    pub time_major: Vec<usize>,
    pub presence: Vec<usize>,
    pub clip: Vec<usize>,
}

/// Output of one clip forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Presence-map logits `[T/8P, C]`.
    pub logits: Var,
    /// `sigmoid(logits)`.
    pub presence: Var,
    /// Time-mean of `presence`, `[C]`.
    pub clip: Var,
    pub trace: ShapeTrace,
}

/// The full model: configuration, parameter layout and parameters.
#[derive(Debug, Clone)]
pub struct HtsModel<T> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParamStore<T>,
    plans: Vec<Vec<BlockPlan<T>>>,
}

struct Builder<'a, T> {
    store: ParamStore<T>,
    rng: Option<&'a mut SeededRng>,
}

impl<T: Real> Builder<'_, T> {
    fn weight(&mut self, name: String, shape: &[usize]) -> ParamId {
        let t = match self.rng.as_deref_mut() {
            Some(r) => Tensor::from_fn(shape, |_| T::from_f64(r.trunc_normal(INIT_STD))),
            None => Tensor::zeros(shape),
        };
        self.store.push(name, t)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.push(name, Tensor::zeros(shape))
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> NormIds {
        NormIds {
            gamma: self.store.push(format!("{prefix}.weight"), Tensor::full(&[dim], T::ONE)),
            beta: self.zeros(format!("{prefix}.bias"), &[dim]),
        }
    }

    fn linear(&mut self, prefix: &str, inp: usize, out: usize, bias: bool) -> LinearIds {
        LinearIds {
            weight: self.weight(format!("{prefix}.weight"), &[inp, out]),
            bias: bias.then(|| self.zeros(format!("{prefix}.bias"), &[out])),
        }
    }
}

impl<T: Real> HtsModel<T> {
    /// Builds a model with seeded truncated-normal weights (std 0.02), zero
    /// biases and relative-bias tables, and unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::with_stream(seed, stream::INIT);
        Self::build(config, Some(&mut rng))
    }

    /// Builds a model whose weights are all zero (layer-norm gains one).
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        Self::build(config, None)
    }

    fn build(config: ModelConfig, rng: Option<&mut SeededRng>) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            store: ParamStore::new(),
            rng,
        };
        let d = config.embed_dim;
        let p = config.patch;
        let patch_weight = b.weight("patch_embed.proj.weight".into(), &[d, 1, p, p]);
        let patch_bias = b.zeros("patch_embed.proj.bias".into(), &[d]);
        let patch_norm = b.norm("patch_embed.norm", d);
        let abs_pos = config
            .abs_pos_embed
            .then(|| b.weight("absolute_pos_embed".into(), &[config.time_patches(), config.freq_patches(), d]));
        let mut stages = Vec::new();
        let mut merges = Vec::new();
        for s in 0..config.groups() {
            let st = config.stage(s);
            let c = st.dim;
            let hidden = config.mlp_hidden(c);
            let mut blocks = Vec::new();
            for k in 0..st.depth {
                let pre = format!("layers.{s}.blocks.{k}");
                let norm1 = b.norm(&format!("{pre}.norm1"), c);
                let qkv = b.linear(&format!("{pre}.attn.qkv"), c, 3 * c, true);
                let span = 2 * st.window - 1;
                let rel_table = config
                    .rel_pos_bias
                    .then(|| b.zeros(format!("{pre}.attn.relative_position_bias_table"), &[span * span, st.heads]));
                let proj = b.linear(&format!("{pre}.attn.proj"), c, c, true);
                let norm2 = b.norm(&format!("{pre}.norm2"), c);
                let fc1 = b.linear(&format!("{pre}.mlp.fc1"), c, hidden, true);
                let fc2 = b.linear(&format!("{pre}.mlp.fc2"), hidden, c, true);
                blocks.push(BlockIds {
                    norm1,
                    qkv,
                    rel_table,
                    proj,
                    norm2,
                    fc1,
                    fc2,
                });
            }
            stages.push(blocks);
            if s + 1 < config.groups() {
                let norm = b.norm(&format!("layers.{s}.downsample.norm"), 4 * c);
                let reduction = b.weight(format!("layers.{s}.downsample.reduction.weight"), &[4 * c, 2 * c]);
                merges.push(MergeIds { norm, reduction });
            }
        }
        let final_norm = b.norm("norm", config.final_dim());
        let head_weight = b.weight(
            "tscam_conv.weight".into(),
            &[config.classes, config.final_dim(), 3, config.final_freq()],
        );
        let head_bias = b.zeros("tscam_conv.bias".into(), &[config.classes]);
        let layout = Layout {
            patch_weight,
            patch_bias,
            patch_norm,
            abs_pos,
            stages,
            merges,
            final_norm,
            head_weight,
            head_bias,
        };
        let plans = build_plans(&config)?;
        Ok(Self {
            config,
            layout,
            params: b.store,
            plans,
        })
    }

    /// Same layout with replaced parameters (shapes must match).
    pub fn with_params(&self, params: ParamStore<T>) -> Result<Self> {
        self.params.check_compatible(&params)?;
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    pub fn cast<U: Real>(&self) -> HtsModel<U> {
        HtsModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
            plans: build_plans(&self.config).expect("validated config"),
        }
    }

    /// Forward pass of one `[T, F]` spectrogram. `vars` must come from
    /// [`ParamStore::attach`] on this model's parameters.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], spec: Var) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let l = &self.layout;
        let v = |id: ParamId| vars[id.0];
        let mut trace = ShapeTrace {
            spectrogram: g.shape(spec).to_vec(),
            ..ShapeTrace::default()
        };
        if trace.spectrogram != [cfg.frames, cfg.mel_bins] {
            return Err(mismatch("forward", &trace.spectrogram, &[cfg.frames, cfg.mel_bins]));
        }
        let tokens = tokenizer::patch_embed(g, spec, v(l.patch_weight), v(l.patch_bias), cfg.patch)?;
        let s = g.shape(tokens).to_vec();
        trace.tokens = vec![s[0] * s[1], s[2]];
        let mut x = layer_norm(g, tokens, l.patch_norm, vars)?;
        if let Some(pos) = l.abs_pos {
            x = g.add(x, v(pos))?;
        }
        let grid0 = TokenGrid::from_config(cfg)?;
        x = tokenizer::layout_grid_var(g, x, &grid0)?;
        trace.grid = g.shape(x).to_vec();
        for (s, blocks) in l.stages.iter().enumerate() {
            for (k, ids) in blocks.iter().enumerate() {
                let plan = &self.plans[s][k];
                x = window_attention_block(g, x, ids, vars, &plan.layout, plan.heads, plan.mask.as_ref(), None)?;
            }
            if let Some(m) = l.merges.get(s) {
                x = patch_merge(g, x, m, vars)?;
            }
            trace.stages.push(g.shape(x).to_vec());
        }
        x = layer_norm(g, x, l.final_norm, vars)?;
        trace.final_grid = g.shape(x).to_vec();
        let final_grid = grid0.downsampled((cfg.groups() - 1) as u32)?;
        let tm = tokenizer::grid_to_time_major_var(g, x, &final_grid)?;
        trace.time_major = g.shape(tm).to_vec();
        let logits = head::ts_conv(g, tm, v(l.head_weight), v(l.head_bias))?;
        let presence = g.sigmoid(logits);
        trace.presence = g.shape(presence).to_vec();
        let clip = head::pool_clip(g, presence)?;
        trace.clip = g.shape(clip).to_vec();
        Ok(ForwardOutput {
            logits,
            presence,
            clip,
            trace,
        })
    }

    /// Convenience: forward a spectrogram given as a tensor on a fresh graph.
    pub fn run(&self, spec: &Tensor<T>) -> Result<(Graph<T>, Vec<Var>, ForwardOutput)> {
        let mut g = Graph::new();
        let vars = self.params.attach(&mut g);
        let s = g.constant(spec.clone());
        let out = self.forward(&mut g, &vars, s)?;
        Ok((g, vars, out))
    }

    /// Encoder-only parameter count (everything but the head).
    pub fn encoder_param_count(&self) -> usize {
        self.params.count() - self.head_param_count()
    }

    pub fn head_param_count(&self) -> usize {
        self.params.get(self.layout.head_weight).len() + self.params.get(self.layout.head_bias).len()
    }
}

fn build_plans<T: Real>(cfg: &ModelConfig) -> Result<Vec<Vec<BlockPlan<T>>>> {
    (0..cfg.groups())
        .map(|s| {
            let st = cfg.stage(s);
            (0..st.depth)
                .map(|k| {
                    let shift = if k % 2 == 1 { st.shift } else { 0 };
                    let layout = WindowLayout::new(st.rows, st.cols, st.window, shift)?;
                    Ok(BlockPlan {
                        layout,
                        heads: st.heads,
                        mask: layout.mask_for_heads(st.heads),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn layer_norm<T: Real>(g: &mut Graph<T>, x: Var, ids: NormIds, vars: &[Var]) -> Result<Var> {
    g.layer_norm(x, vars[ids.gamma.0], vars[ids.beta.0])
}

pub fn linear<T: Real>(g: &mut Graph<T>, x: Var, ids: LinearIds, vars: &[Var]) -> Result<Var> {
    let y = g.matmul(x, vars[ids.weight.0])?;
    match ids.bias {
        Some(b) => g.add_broadcast(y, vars[b.0]),
        None => Ok(y),
    }
}

/// Multi-head self-attention inside each window. `x` is `[k, n, C]`,
/// `mask` (when shifted) is `[k, heads, n, n]`.
#[allow(clippy::too_many_arguments)]
pub fn window_msa<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    ids: &BlockIds,
    vars: &[Var],
    window: usize,
    heads: usize,
    mask: Option<&Tensor<T>>,
    mut macs: Option<&mut AttentionMacs>,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (k, n, c) = (s[0], s[1], s[2]);
    if heads == 0 || c % heads != 0 {
        return Err(invalid("window_attention", format!("dim {c} not divisible by {heads} heads")));
    }
    let d = c / heads;
    let mut count = |g: &Graph<T>, before: u64, slot: fn(&mut AttentionMacs) -> &mut u64| {
        if let Some(m) = macs.as_deref_mut() {
            *slot(m) += g.macs() - before;
        }
    };
    let m0 = g.macs();
    let qkv = linear(g, x, ids.qkv, vars)?;
    count(g, m0, |m| &mut m.qkv);
    let qkv = g.reshape(qkv, &[k, n, 3, heads, d])?;
    let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
    let mut parts = [qkv; 3];
    for (i, p) in parts.iter_mut().enumerate() {
        let sl = g.slice(qkv, 0, i, 1)?;
        *p = g.reshape(sl, &[k * heads, n, d])?;
    }
    let [q, kk, vv] = parts;
    let q = g.scale(q, T::ONE / T::from_usize(d).sqrt());
    let m0 = g.macs();
    let scores = g.bmm(q, kk, true)?;
    count(g, m0, |m| &mut m.scores);
    let mut scores = g.reshape(scores, &[k, heads, n, n])?;
    if let Some(table) = ids.rel_table {
        let bias = relative_bias(g, vars[table.0], window, heads)?;
        scores = g.add_broadcast(scores, bias)?;
    }
    if let Some(mask) = mask {
        if mask.shape() != [k, heads, n, n] {
            return Err(mismatch("window_attention", mask.shape(), &[k, heads, n, n]));
        }
        let m = g.constant(mask.clone());
        scores = g.add(scores, m)?;
    }
    let attn = g.softmax(scores);
    let attn = g.reshape(attn, &[k * heads, n, n])?;
    let m0 = g.macs();
    let o = g.bmm(attn, vv, false)?;
    count(g, m0, |m| &mut m.mix);
    let o = g.reshape(o, &[k, heads, n, d])?;
    let o = g.permute(o, &[0, 2, 1, 3])?;
    let o = g.reshape(o, &[k, n, c])?;
    let m0 = g.macs();
    let out = linear(g, o, ids.proj, vars)?;
    count(g, m0, |m| &mut m.output);
    Ok(out)
}

/// Expands a `[(2M−1)², heads]` table into the `[heads, M², M²]` bias.
pub fn relative_bias<T: Real>(g: &mut Graph<T>, table: Var, window: usize, heads: usize) -> Result<Var> {
    let span = 2 * window - 1;
    if g.shape(table) != [span * span, heads] {
        return Err(mismatch("relative_bias", g.shape(table), &[span * span, heads]));
    }
    let rel = relative_position_index(window);
    let n = window * window;
    let mut idx = Vec::with_capacity(heads * n * n);
    for h in 0..heads {
        for &r in &rel {
            idx.push((r * heads + h) as u32);
        }
    }
    g.gather(table, idx, &[heads, n, n])
}

/// Pre-norm residual block: `x += WindowMSA(LN(x)); x += MLP(LN(x))` on a
/// `[rows, cols, C]` grid.
#[allow(clippy::too_many_arguments)]
pub fn window_attention_block<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    ids: &BlockIds,
    vars: &[Var],
    layout: &WindowLayout,
    heads: usize,
    mask: Option<&Tensor<T>>,
    macs: Option<&mut AttentionMacs>,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || s[0] != layout.rows || s[1] != layout.cols {
        return Err(mismatch("window_attention_block", &s, &[layout.rows, layout.cols]));
    }
    let c = s[2];
    let h = layer_norm(g, x, ids.norm1, vars)?;
    let win = g.gather(h, expand_rows(&layout.partition_indices(), c), &[layout.count(), layout.tokens(), c])?;
    let att = window_msa(g, win, ids, vars, layout.window, heads, mask, macs)?;
    let back = g.gather(att, expand_rows(&layout.reverse_indices(), c), &s)?;
    let x = g.add(x, back)?;
    let h = layer_norm(g, x, ids.norm2, vars)?;
    let h = linear(g, h, ids.fc1, vars)?;
    let h = g.gelu(h);
    let h = linear(g, h, ids.fc2, vars)?;
    g.add(x, h)
}

/// Gather indices concatenating each 2×2 neighbourhood in the order
/// (0,0), (1,0), (0,1), (1,1) as (row offset, col offset).
pub fn merge_indices(rows: usize, cols: usize, c: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(rows * cols * c);
    for r in 0..rows / 2 {
        for col in 0..cols / 2 {
            for (dr, dc) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let base = ((2 * r + dr) * cols + 2 * col + dc) * c;
                idx.extend((base..base + c).map(|v| v as u32));
            }
        }
    }
    idx
}

/// `[rows, cols, C] -> [rows/2, cols/2, 2C]` via `Linear(LN(concat 2×2))`.
pub fn patch_merge<T: Real>(g: &mut Graph<T>, x: Var, ids: &MergeIds, vars: &[Var]) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 || !s[0].is_multiple_of(2) || !s[1].is_multiple_of(2) {
        return Err(invalid("patch_merge", format!("grid {s:?} has odd extents")));
    }
    let (rows, cols, c) = (s[0], s[1], s[2]);
    let cat = g.gather(x, merge_indices(rows, cols, c), &[rows / 2, cols / 2, 4 * c])?;
    let h = layer_norm(g, cat, ids.norm, vars)?;
    g.matmul(h, vars[ids.reduction.0])
}

/// Closed-form parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub encoder: usize,
    pub head: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.encoder + self.head
    }
}

pub fn param_count(cfg: &ModelConfig) -> ParamCount {
    let d = cfg.embed_dim;
    let mut enc = d * cfg.patch * cfg.patch + d + 2 * d;
    if cfg.abs_pos_embed {
        enc += cfg.time_patches() * cfg.freq_patches() * d;
    }
    for s in 0..cfg.groups() {
        let StageGeometry {
            dim: c,
            heads,
            depth,
            window,
            ..
        } = cfg.stage(s);
        let hidden = cfg.mlp_hidden(c);
        let rel = if cfg.rel_pos_bias {
            (2 * window - 1) * (2 * window - 1) * heads
        } else {
            0
        };
        let block = 2 * c + (3 * c * c + 3 * c) + rel + (c * c + c) + 2 * c + (c * hidden + hidden) + (hidden * c + c);
        enc += depth * block;
        if s + 1 < cfg.groups() {
            enc += 8 * c + 4 * c * 2 * c;
        }
    }
    enc += 2 * cfg.final_dim();
    let head = cfg.classes * cfg.final_dim() * 3 * cfg.final_freq() + cfg.classes;
    ParamCount { encoder: enc, head }
}

/// Analytic attention cost terms for `f × t` tokens of dimension `D` with
/// `M × M` windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityQuery {
    pub f: usize,
    pub t: usize,
    pub dim: usize,
    pub window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Complexity {
    /// Global attention: `(f·t·D², (f·t)²·D)`.
    pub global: (u128, u128),
    /// Window attention: `(f·t·D², M²·f·t·D)`.
    pub windowed: (u128, u128),
    /// Reduction of the second term, `f·t / M²`.
    pub ratio: u128,
}

pub fn complexity(q: ComplexityQuery) -> Result<Complexity> {
    if q.f == 0 || q.t == 0 || q.dim == 0 || q.window == 0 {
        return Err(invalid("complexity", "all extents must be positive"));
    }
    let ft = (q.f * q.t) as u128;
    let m2 = (q.window * q.window) as u128;
    if !ft.is_multiple_of(m2) {
        return Err(invalid("complexity", format!("M² = {m2} does not divide f·t = {ft}")));
    }
    let d = q.dim as u128;
    Ok(Complexity {
        global: (ft * d * d, ft * ft * d),
        windowed: (ft * d * d, m2 * ft * d),
        ratio: ft / m2,
    })
}

/// Runs one window-attention module on random tokens and returns the
/// kernel-level MAC counts. Requires `M | f` and `M | t`.
pub fn measure_window_attention(q: ComplexityQuery, heads: usize, seed: u64) -> Result<AttentionMacs> {
    complexity(q)?;
    let layout = WindowLayout::new(q.t, q.f, q.window, 0)?;
    let c = q.dim;
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::<f32>::new();
    let mut rnd = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.trunc_normal(INIT_STD) as f32);
    let ids = BlockIds {
        norm1: NormIds {
            gamma: store.push("g1", Tensor::full(&[c], 1.0)),
            beta: store.push("b1", Tensor::zeros(&[c])),
        },
        qkv: LinearIds {
            weight: store.push("qkv", rnd(&[c, 3 * c])),
            bias: None,
        },
        rel_table: None,
        proj: LinearIds {
            weight: store.push("proj", rnd(&[c, c])),
            bias: None,
        },
        norm2: NormIds {
            gamma: store.push("g2", Tensor::full(&[c], 1.0)),
            beta: store.push("b2", Tensor::zeros(&[c])),
        },
        fc1: LinearIds {
            weight: store.push("fc1", rnd(&[c, c])),
            bias: None,
        },
        fc2: LinearIds {
            weight: store.push("fc2", rnd(&[c, c])),
            bias: None,
        },
    };
    let x = rnd(&[layout.count(), layout.tokens(), c]);
    let mut g = Graph::new();
    let vars = store.attach(&mut g);
    let xv = g.constant(x);
    let mut macs = AttentionMacs::default();
    window_msa(&mut g, xv, &ids, &vars, q.window, heads, None, Some(&mut macs))?;
    Ok(macs)
}
