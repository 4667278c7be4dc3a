//! Clip metrics (mAP, accuracy), presence-map event decoding and
//! event-based F1.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, mismatch, Result};
use crate::head::PresenceMap;

/// Per-class average precision and their mean over classes with at least
/// one positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    /// `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

fn check_matrix<A, B>(op: &'static str, a: &[Vec<A>], b: &[Vec<B>]) -> Result<usize> {
    if a.is_empty() || a.len() != b.len() {
        return Err(mismatch(op, &[a.len()], &[b.len()]));
    }
    let c = a[0].len();
    for (x, y) in a.iter().zip(b) {
        if x.len() != c || y.len() != c {
            return Err(mismatch(op, &[c], &[x.len(), y.len()]));
        }
    }
    Ok(c)
}

/// Average precision of one class. Ranks by descending score; equal scores
/// keep their original (index) order.
pub fn average_precision(scores: &[f32], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            acc += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(acc / positives as f64)
}

/// `scores[n][c]`, `labels[n][c]`.
pub fn compute_map(scores: &[Vec<f32>], labels: &[Vec<bool>]) -> Result<MapReport> {
    let c = check_matrix("compute_map", scores, labels)?;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let s: Vec<f32> = scores.iter().map(|r| r[k]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[k]).collect();
            average_precision(&s, &l)
        })
        .collect();
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(invalid("compute_map", "no class has a positive label"));
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok(MapReport { per_class, mean })
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn compute_accuracy(scores: &[Vec<f32>], labels: &[usize]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(mismatch("compute_accuracy", &[scores.len()], &[labels.len()]));
    }
    let hits = scores.iter().zip(labels).filter(|(s, &l)| argmax(s) == l).count();
    Ok(hits as f64 / scores.len() as f64)
}

/// One detected or reference event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventInterval {
    pub class_id: usize,
    pub onset: f64,
    pub offset: f64,
}

impl EventInterval {
    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub threshold: f32,
    pub min_duration: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_duration: 0.1,
        }
    }
}

/// Width-3 median filter; the edges replicate their neighbour.
pub fn median3(xs: &[f32]) -> Vec<f32> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            let a = xs[i.saturating_sub(1)];
            let b = xs[i];
            let c = xs[(i + 1).min(n - 1)];
            a.max(b).min(a.min(b).max(c))
        })
        .collect()
}

/// Maximal runs `[start, end)` of `true`.
pub fn runs(bits: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &b) in bits.iter().enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, bits.len()));
    }
    out
}

/// Median filter, binarize (`≥ threshold`), extract runs and drop those
/// shorter than the minimum duration. Events come out grouped by class,
/// then by onset.
pub fn decode_events(map: &PresenceMap, params: DecodeParams, step_seconds: f64) -> Result<Vec<EventInterval>> {
    if !(params.threshold > 0.0 && params.threshold < 1.0) {
        return Err(invalid("decode_events", "threshold must lie in (0, 1)"));
    }
    let mut out = Vec::new();
    for c in 0..map.classes {
        let smooth = median3(&map.class_series(c));
        let bits: Vec<bool> = smooth.iter().map(|&v| v >= params.threshold).collect();
        for (s, e) in runs(&bits) {
            let ev = EventInterval {
                class_id: c,
                onset: s as f64 * step_seconds,
                offset: e as f64 * step_seconds,
            };
            if ev.duration() + 1e-9 >= params.min_duration {
                out.push(ev);
            }
        }
    }
    Ok(out)
}

/// Binary `[steps, classes]` raster of events on a step grid.
pub fn rasterize(events: &[EventInterval], steps: usize, classes: usize, step_seconds: f64) -> Vec<bool> {
    let mut out = vec![false; steps * classes];
    for ev in events {
        let s = libm::round(ev.onset / step_seconds) as usize;
        let e = (libm::round(ev.offset / step_seconds) as usize).min(steps);
        for t in s..e {
            out[t * classes + ev.class_id] = true;
        }
    }
    out
}

/// True/false positive and false negative counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl EventCounts {
    pub fn add(&mut self, o: EventCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
    }
}

/// Whether `pred` matches `gold` under the onset/offset collars.
pub fn events_match(pred: &EventInterval, gold: &EventInterval, collar: f64) -> bool {
    const TOL: f64 = 1e-9;
    let off_collar = collar.max(0.2 * gold.duration());
    pred.class_id == gold.class_id
        && (pred.onset - gold.onset).abs() <= collar + TOL
        && (pred.offset - gold.offset).abs() <= off_collar + TOL
}

/// Per-class counts for one clip. Gold events are visited in onset order and
/// each takes the earliest-onset unmatched prediction that matches it.
pub fn match_events(pred: &[EventInterval], gold: &[EventInterval], collar: f64, classes: usize) -> Result<Vec<EventCounts>> {
    if !(collar > 0.0) {
        return Err(invalid("event_f1", "collar must be positive"));
    }
    if let Some(e) = pred.iter().chain(gold).find(|e| e.class_id >= classes) {
        return Err(invalid("event_f1", alloc::format!("class {} >= {classes}", e.class_id)));
    }
    let by_onset = |xs: &[EventInterval]| {
        let mut v = xs.to_vec();
        v.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        v
    };
    let (pred, gold) = (by_onset(pred), by_onset(gold));
    let mut used = vec![false; pred.len()];
    let mut counts = vec![EventCounts::default(); classes];
    for g in &gold {
        match (0..pred.len()).find(|&i| !used[i] && events_match(&pred[i], g, collar)) {
            Some(i) => {
                used[i] = true;
                counts[g.class_id].tp += 1;
            }
            None => counts[g.class_id].fn_ += 1,
        }
    }
    for (p, u) in pred.iter().zip(&used) {
        if !u {
            counts[p.class_id].fp += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub counts: Vec<EventCounts>,
    /// `None` for classes with neither gold nor predicted events.
    pub per_class: Vec<Option<f64>>,
    pub average: f64,
}

impl F1Report {
    pub fn from_counts(counts: Vec<EventCounts>) -> Self {
        let per_class: Vec<Option<f64>> = counts.iter().map(|c| (!c.is_empty()).then(|| c.f1())).collect();
        let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
        let average = if valid.is_empty() { 0.0 } else { valid.iter().sum::<f64>() / valid.len() as f64 };
        Self {
            counts,
            per_class,
            average,
        }
    }
}

/// Event-based F1 of one clip (or a flattened list).
pub fn event_f1(pred: &[EventInterval], gold: &[EventInterval], collar: f64, classes: usize) -> Result<F1Report> {
    Ok(F1Report::from_counts(match_events(pred, gold, collar, classes)?))
}

/// Event-based F1 over many clips: counts are summed per class in clip order.
pub fn event_f1_clips(clips: &[(Vec<EventInterval>, Vec<EventInterval>)], collar: f64, classes: usize) -> Result<F1Report> {
    let mut total = vec![EventCounts::default(); classes];
    for (pred, gold) in clips {
        for (t, c) in total.iter_mut().zip(match_events(pred, gold, collar, classes)?) {
            t.add(c);
        }
    }
    Ok(F1Report::from_counts(total))
}
