//! Command-line driver: data generation, perturbation, training, evaluation
//! and saliency export.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ctxrnnt::dataset::ReverbScope;
use ctxrnnt::training::TrainMode;

use crate::commands::DecodeContext;
use crate::config::{RunConfig, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(name = "ctxrnnt", version, about = "RNN-T training with full-utterance context")]
pub struct Cli {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Segmented,
    Full,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Segmented => TrainMode::Segmented,
            ModeArg::Full => TrainMode::FullUtterance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    /// Use the objective stored in each checkpoint.
    Auto,
    Segmented,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Full,
    Segments,
}

impl From<ScopeArg> for ReverbScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Full => ReverbScope::FullUtterance,
            ScopeArg::Segments => ReverbScope::SegmentsOnly,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/dev/test manifests of the synthetic context-cue task.
    Datagen {
        #[arg(long)]
        out: PathBuf,
        /// Training utterances (overrides data.n_train).
        #[arg(long)]
        n: Option<usize>,
        /// Task seed (overrides data.task.rng_seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes checkpoints, best.sgck and train.log to --out.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Objective (overrides train.mode).
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Training seed (overrides train.seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from the latest checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Decode a manifest with two checkpoints and print the comparison.
    Eval {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        new: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Beam width (overrides decode.beam_width).
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_enum, default_value = "auto")]
        context: ContextArg,
        /// Write the report rows as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write per-segment decodes (base.decodes.jsonl, new.decodes.jsonl).
        #[arg(long)]
        decodes: Option<PathBuf>,
    },
    /// Export the per-frame input-gradient norms of one segment's loss.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        segment: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
    },
    /// Reverberate a manifest over whole utterances or labeled segments only.
    Perturb {
        #[arg(long)]
        input: PathBuf,
        /// Impulse response: a WAV file or a text file of taps.
        #[arg(long)]
        ir: PathBuf,
        #[arg(long, value_enum)]
        scope: ScopeArg,
        #[arg(long)]
        output: PathBuf,
        /// Channel offset scale for records without audio.
        #[arg(long)]
        channel_scale: Option<f64>,
    },
    /// Print the effective configuration.
    Config,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Datagen { out, n, seed } => {
            if let Some(n) = n {
                cfg.data.n_train = n;
            }
            if let Some(s) = seed {
                cfg.data.task.rng_seed = s;
            }
            cfg.validate()?;
            for s in commands::datagen(&cfg, &out)? {
                println!(
                    "{}: {} utterances, {} labeled segments, mean prefix {:.1} frames -> {}",
                    s.name,
                    s.utterances,
                    s.labeled_segments,
                    s.mean_prefix_frames,
                    s.path.display()
                );
            }
        }
        Command::Train {
            train,
            dev,
            out,
            mode,
            seed,
            steps,
            resume,
        } => {
            if let Some(m) = mode {
                cfg.train.mode = m.into();
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            cfg.validate()?;
            let o = commands::train(&cfg, &train, dev.as_deref(), &out, resume)?;
            println!("mode: {}", cfg.train.mode);
            println!("steps: {} ({} run now)", o.step, o.steps_run);
            match o.best.dev_loss {
                Some(l) => println!("best checkpoint: {} (step {}, dev loss {l:.4})", o.best.path.display(), o.best.step),
                None => println!("best checkpoint: {} (step {}, no dev set)", o.best.path.display(), o.best.step),
            }
            println!(
                "mean batch wall time: {:.2} ms (forward {:.2} ms, backward {:.2} ms)",
                o.mean_wall_ms, o.mean_forward_ms, o.mean_backward_ms
            );
        }
        Command::Eval {
            base,
            new,
            manifest,
            beam,
            context,
            json,
            decodes,
        } => {
            if let Some(b) = beam {
                cfg.decode.beam_width = b;
            }
            cfg.validate()?;
            let context = match context {
                ContextArg::Auto => DecodeContext::Auto,
                ContextArg::Segmented => DecodeContext::Fixed(TrainMode::Segmented),
                ContextArg::Full => DecodeContext::Fixed(TrainMode::FullUtterance),
            };
            let out = commands::eval(&cfg, &base, &new, &manifest, context)?;
            for name in &out.report.skipped {
                eprintln!("warning: no reference tokens for condition `{name}`; row omitted");
            }
            print!("{}", out.report.to_table());
            if let Some(p) = json {
                let text = serde_json::to_string_pretty(&out.report)?;
                std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(dir) = decodes {
                std::fs::create_dir_all(&dir)?;
                commands::write_decodes(&out.base_decodes, &dir.join("base.decodes.jsonl"))?;
                commands::write_decodes(&out.new_decodes, &dir.join("new.decodes.jsonl"))?;
            }
        }
        Command::Saliency {
            checkpoint,
            manifest,
            utterance,
            segment,
            out,
            mode,
        } => {
            let tr = commands::saliency(&checkpoint, &manifest, &utterance, segment, mode.into(), &out)?;
            println!(
                "{} frames, segment [{}, {}], peaks: prefix {:.3e}, segment {:.3e} -> {}",
                tr.len(),
                tr.target_segment.0,
                tr.target_segment.1,
                tr.prefix_peak(),
                tr.segment_peak(),
                out.display()
            );
        }
        Command::Perturb {
            input,
            ir,
            scope,
            output,
            channel_scale,
        } => {
            if let Some(s) = channel_scale {
                cfg.perturb.channel_scale = s;
            }
            cfg.validate()?;
            let s = commands::perturb(&cfg, &input, &ir, scope.into(), &output)?;
            println!(
                "{} utterances ({} from audio) -> {}",
                s.utterances,
                s.from_audio,
                output.display()
            );
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}
