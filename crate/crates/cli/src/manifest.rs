//! CSV clip manifests: `path,labels,events`.
//!
//! `labels` is a `;`-separated list of class ids, `events` a `;`-separated
//! list of `class:onset:offset` triples in seconds (may be empty). Relative
//! paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use htsat_core::metrics::EventInterval;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClipEntry {
    /// As written in the manifest.
    pub path: String,
    /// Resolved against the manifest directory.
    pub resolved: PathBuf,
    pub labels: Vec<usize>,
    pub events: Vec<EventInterval>,
}

impl ClipEntry {
    /// Multi-hot target vector.
    pub fn target(&self, classes: usize) -> Vec<f32> {
        let mut t = vec![0.0; classes];
        for &c in &self.labels {
            t[c] = 1.0;
        }
        t
    }

    /// Clip identifier used in output files: the file stem.
    pub fn id(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ClipEntry>,
}

fn parse_labels(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let c = part.parse().map_err(|_| format!("invalid class id {part:?}"))?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

fn parse_events(s: &str) -> std::result::Result<Vec<EventInterval>, String> {
    let mut out = Vec::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let fields: Vec<&str> = part.split(':').collect();
        let [c, on, off] = fields[..] else {
            return Err(format!("event {part:?} is not class:onset:offset"));
        };
        let ev = EventInterval {
            class_id: c.trim().parse().map_err(|_| format!("invalid class id {c:?}"))?,
            onset: on.trim().parse().map_err(|_| format!("invalid onset {on:?}"))?,
            offset: off.trim().parse().map_err(|_| format!("invalid offset {off:?}"))?,
        };
        if !(ev.onset >= 0.0 && ev.onset < ev.offset) {
            return Err(format!("event {part:?} needs 0 <= onset < offset"));
        }
        out.push(ev);
    }
    Ok(out)
}

pub fn format_labels(labels: &[usize]) -> String {
    labels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

/// Seconds with at most six decimals and at least one (`2.0`, `0.32`).
pub fn format_seconds(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0');
    if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    }
}

pub fn format_events(events: &[EventInterval]) -> String {
    events
        .iter()
        .map(|e| format!("{}:{}:{}", e.class_id, format_seconds(e.onset), format_seconds(e.offset)))
        .collect::<Vec<_>>()
        .join(";")
}

impl Manifest {
    /// Loads and validates a manifest: every clip must exist and every class
    /// id must be below `classes`.
    pub fn load(path: &Path, classes: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(crate::error::io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
        let csv_err = |source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let headers = reader.headers().map_err(csv_err)?.clone();
        if headers.get(0) != Some("path") || headers.get(1) != Some("labels") {
            return Err(CliError::Manifest {
                path: path.to_path_buf(),
                line: 1,
                msg: "header must be `path,labels[,events]`".into(),
            });
        }
        let mut entries = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(i + 2, |p| p.line() as usize);
            let bad = |msg: String| CliError::Manifest {
                path: path.to_path_buf(),
                line,
                msg,
            };
            let clip = rec.get(0).unwrap_or("").trim().to_string();
            if clip.is_empty() {
                return Err(bad("empty clip path".into()));
            }
            let labels = parse_labels(rec.get(1).unwrap_or("")).map_err(bad)?;
            let events = parse_events(rec.get(2).unwrap_or("")).map_err(bad)?;
            if let Some(c) = labels.iter().chain(events.iter().map(|e| &e.class_id)).find(|&&c| c >= classes) {
                return Err(bad(format!("class id {c} is outside [0, {classes})")));
            }
            let resolved = base.join(&clip);
            if !resolved.is_file() {
                return Err(bad(format!("clip {} does not exist", resolved.display())));
            }
            entries.push(ClipEntry {
                path: clip,
                resolved,
                labels,
                events,
            });
        }
        if entries.is_empty() {
            return Err(CliError::Manifest {
                path: path.to_path_buf(),
                line: 1,
                msg: "manifest has no clips".into(),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    /// Writes `path,labels,events` rows (paths as stored in the entries).
    pub fn write(path: &Path, entries: &[ClipEntry]) -> Result<()> {
        let csv_err = |source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["path", "labels", "events"]).map_err(csv_err)?;
        for e in entries {
            w.write_record([e.path.as_str(), &format_labels(&e.labels), &format_events(&e.events)])
                .map_err(csv_err)?;
        }
        w.flush().map_err(crate::error::io_err(path))
    }

    /// Class ids per clip, for the balanced sampler.
    pub fn label_sets(&self) -> Vec<Vec<usize>> {
        self.entries.iter().map(|e| e.labels.clone()).collect()
    }

    /// A short split name derived from the file name.
    pub fn split_name(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    }
}
