//! Argument parsing and dispatch.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use htsat_core::model::ComplexityQuery;

use crate::commands::{self, EvalArgs, InferArgs, Task, TrainArgs};
use crate::error::Result;
use crate::synth::SynthOptions;

#[derive(Debug, Parser)]
#[command(name = "htsat", version, about = "Hierarchical token-semantic audio transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from scratch on a manifest.
    Train {
        /// Config file; the tiny preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for checkpoints and metrics.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Task::Clip)]
        task: Task,
        /// Directory for metrics.csv and events.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f32>,
        #[arg(long)]
        collar: Option<f64>,
    },
    /// Classify one WAV file and write its presence map.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Presence-map CSV path.
        #[arg(long, default_value = "presence.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
    /// Generate a synthetic tone-burst dataset with a strong-label manifest.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n_clips: usize,
        #[arg(long, default_value_t = 8)]
        n_classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clip length in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 32_000)]
        sample_rate: u32,
        #[arg(long, default_value_t = 1)]
        min_events: usize,
        #[arg(long, default_value_t = 3)]
        max_events: usize,
        /// Shortest event in seconds.
        #[arg(long, default_value_t = 0.5)]
        min_event_len: f64,
        /// Longest event in seconds.
        #[arg(long, default_value_t = 3.0)]
        max_event_len: f64,
    },
    /// Print analytic and measured attention costs.
    Complexity {
        #[arg(long)]
        f: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
    },
}

/// Runs one parsed command; progress goes to `log`, data to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            manifest,
            out,
            seed,
        } => {
            let summary = commands::train(
                &TrainArgs {
                    config,
                    manifest,
                    out,
                    seed,
                },
                log,
            )?;
            writeln!(stdout, "{}", summary.final_checkpoint.display()).map_err(crate::error::io_err("<stdout>"))?;
        }
        Command::Eval {
            checkpoint,
            manifest,
            task,
            out,
            threshold,
            collar,
        } => {
            commands::eval(
                &EvalArgs {
                    checkpoint,
                    manifest,
                    task,
                    out,
                    threshold,
                    collar,
                },
                stdout,
            )?;
        }
        Command::Infer {
            checkpoint,
            wav,
            out,
            top_k,
        } => {
            commands::infer(
                &InferArgs {
                    checkpoint,
                    wav,
                    out,
                    top_k,
                },
                stdout,
            )?;
        }
        Command::SynthData {
            out,
            n_clips,
            n_classes,
            seed,
            duration,
            sample_rate,
            min_events,
            max_events,
            min_event_len,
            max_event_len,
        } => {
            let opts = SynthOptions {
                n_clips,
                n_classes,
                seed,
                sample_rate,
                duration,
                min_events,
                max_events,
                min_event_seconds: min_event_len,
                max_event_seconds: max_event_len,
            };
            commands::synth_data(&out, &opts, stdout)?;
        }
        Command::Complexity { f, t, dim, window, heads } => {
            commands::complexity_table(ComplexityQuery { f, t, dim, window }, heads, stdout)?;
        }
    }
    Ok(())
}
