//! Subcommand implementations. Each returns its result; printing is left to
//! the caller.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use ctxrnnt::dataset::{
    apply_reverb, generate_split, perturb_record, read_manifest, write_manifest, Condition, ContextTask,
    ImpulseResponse, ReverbScope, SplitKind, UtteranceRecord,
};
use ctxrnnt::decode::{compare_systems, decode_utterance_with, score_system, EvalReport, ScoringUnit, SegmentDecode};
use ctxrnnt::features::{extract_logmel, stack_downsample, LogMelConfig, Waveform};
use ctxrnnt::model::{Checkpoint, ModelParams};
use ctxrnnt::saliency::{export_trace, saliency_trace_with, SaliencyTrace};
use ctxrnnt::training::{self, TrainMode, TrainOutcome};
use rayon::prelude::*;

use crate::config::RunConfig;

pub const TRAIN_MANIFEST: &str = "train.manifest";
pub const DEV_MANIFEST: &str = "dev.manifest";
pub const TEST_MANIFEST: &str = "test.manifest";
pub const TRAIN_LOG: &str = "train.log";

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSummary {
    pub name: &'static str,
    pub path: PathBuf,
    pub utterances: usize,
    pub labeled_segments: usize,
    /// Mean frames before the first labeled segment.
    pub mean_prefix_frames: f64,
}

fn summarize(name: &'static str, path: PathBuf, records: &[UtteranceRecord]) -> SplitSummary {
    let labeled_segments = records.iter().map(|r| r.labeled_segments().count()).sum();
    let prefix: usize = records
        .iter()
        .map(|r| r.labeled_segments().next().map_or(0, |(_, s)| s.start))
        .sum();
    SplitSummary {
        name,
        path,
        utterances: records.len(),
        labeled_segments,
        mean_prefix_frames: prefix as f64 / records.len().max(1) as f64,
    }
}

/// Writes train, dev and test manifests of the synthetic task into `out_dir`.
pub fn datagen(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<SplitSummary>> {
    let d = &cfg.data;
    ensure!(d.n_train > 0, "refusing to generate an empty training set (n_train = 0)");
    cfg.check_task_fits_model()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let train = generate_split(&d.task, SplitKind::Train, d.n_train, Condition::Clean)?;
    let dev = generate_split(&d.task, SplitKind::Dev, d.n_dev, Condition::Clean)?;
    let mut test = Vec::new();
    for &c in &d.test_conditions {
        test.extend(generate_split(&d.task, SplitKind::Test, d.n_test, c)?);
    }
    let mut out = Vec::new();
    for (name, file, records) in [
        ("train", TRAIN_MANIFEST, &train),
        ("dev", DEV_MANIFEST, &dev),
        ("test", TEST_MANIFEST, &test),
    ] {
        let path = out_dir.join(file);
        write_manifest(records, &path).with_context(|| format!("writing {}", path.display()))?;
        out.push(summarize(name, path, records));
    }
    Ok(out)
}

fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))
}

/// Trains into `out_dir`, logging one JSON line per step to `train.log`.
pub fn train(
    cfg: &RunConfig,
    train_manifest: &Path,
    dev_manifest: Option<&Path>,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome> {
    let train_set = load_manifest(train_manifest)?;
    let dev_set = match dev_manifest {
        Some(p) => load_manifest(p)?,
        None => Vec::new(),
    };
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let log_path = out_dir.join(TRAIN_LOG);
    let log = if resume {
        fs::OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(log);
    let outcome = training::train(&cfg.model, &train_set, &dev_set, &cfg.train_config(), out_dir, resume, &mut log)?;
    log.flush()?;
    Ok(outcome)
}

/// How the encoder is run when decoding a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeContext {
    /// The objective stored in the checkpoint, full utterance when absent.
    Auto,
    Fixed(TrainMode),
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub params: ModelParams,
    pub context: TrainMode,
}

pub fn load_model(path: &Path, context: DecodeContext) -> Result<LoadedModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let context = match context {
        DecodeContext::Auto => ckpt.mode.unwrap_or(TrainMode::FullUtterance),
        DecodeContext::Fixed(m) => m,
    };
    Ok(LoadedModel {
        params: ckpt.params,
        context,
    })
}

/// Decodes every utterance in parallel, keeping manifest order.
pub fn decode_all(cfg: &RunConfig, model: &LoadedModel, records: &[UtteranceRecord]) -> Result<Vec<SegmentDecode>> {
    let search = cfg.decode.search();
    let per_utt: Vec<Vec<SegmentDecode>> = records
        .par_iter()
        .map(|u| decode_utterance_with(&model.params, u, &search, model.context))
        .collect::<ctxrnnt::Result<_>>()?;
    Ok(per_utt.into_iter().flatten().collect())
}

pub fn write_decodes(decodes: &[SegmentDecode], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for d in decodes {
        serde_json::to_writer(&mut w, d)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub struct EvalOutput {
    pub report: EvalReport,
    pub base_decodes: Vec<SegmentDecode>,
    pub new_decodes: Vec<SegmentDecode>,
}

/// Decodes `manifest` with both checkpoints and compares them. The subset
/// columns count the ambiguous labels of the configured synthetic task.
pub fn eval(
    cfg: &RunConfig,
    base: &Path,
    new: &Path,
    manifest: &Path,
    context: DecodeContext,
) -> Result<EvalOutput> {
    let records = load_manifest(manifest)?;
    ensure!(!records.is_empty(), "manifest {} is empty", manifest.display());
    let task = ContextTask::new(&cfg.data.task)?;
    let member = |k: u32| task.is_ambiguous_label(k);
    let refs: Vec<&UtteranceRecord> = records.iter().collect();

    let base_model = load_model(base, context)?;
    let base_decodes = decode_all(cfg, &base_model, &records)?;
    let base_scores = score_system(&refs, &base_decodes, &member)?;
    let new_model = load_model(new, context)?;
    let new_decodes = decode_all(cfg, &new_model, &records)?;
    let new_scores = score_system(&refs, &new_decodes, &member)?;
    Ok(EvalOutput {
        report: compare_systems(&base_scores, &new_scores, ScoringUnit::Tokens),
        base_decodes,
        new_decodes,
    })
}

/// Computes and writes the saliency trace of one segment.
pub fn saliency(
    checkpoint: &Path,
    manifest: &Path,
    utterance: &str,
    segment: usize,
    mode: TrainMode,
    out: &Path,
) -> Result<SaliencyTrace> {
    let model = load_model(checkpoint, DecodeContext::Fixed(mode))?;
    let records = load_manifest(manifest)?;
    let u = records
        .iter()
        .find(|r| r.id == utterance)
        .ok_or_else(|| anyhow!("utterance `{utterance}` is not in {}", manifest.display()))?;
    let trace = saliency_trace_with(&model.params, u, segment, mode)?;
    export_trace(&trace, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSummary {
    pub utterances: usize,
    /// Records re-extracted from reverberated audio.
    pub from_audio: usize,
    pub by_condition: BTreeMap<Condition, usize>,
}

/// Applies reverberation at `scope`: convolution and feature re-extraction
/// for records with audio, the feature-domain channel offset otherwise.
pub fn perturb(
    cfg: &RunConfig,
    input: &Path,
    ir_path: &Path,
    scope: ReverbScope,
    output: &Path,
) -> Result<PerturbSummary> {
    let records = load_manifest(input)?;
    let ir = ImpulseResponse::read(ir_path).with_context(|| format!("reading impulse response {}", ir_path.display()))?;
    let in_base = input.parent().unwrap_or_else(|| Path::new(""));
    let out_base = output.parent().unwrap_or_else(|| Path::new(""));
    let audio_dir_name = format!(
        "{}.audio",
        output.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    );
    let mut from_audio = 0;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let p = match &r.audio {
            Some(audio) => {
                from_audio += 1;
                perturb_audio(r, &in_base.join(audio), &ir, scope, out_base, &audio_dir_name, i)?
            }
            None => perturb_record(r, &ir, scope, cfg.perturb.channel_scale)?,
        };
        out.push(p);
    }
    write_manifest(&out, output).with_context(|| format!("writing {}", output.display()))?;
    let mut by_condition = BTreeMap::new();
    for r in &out {
        for &c in &r.conditions {
            *by_condition.entry(c).or_insert(0) += 1;
        }
    }
    Ok(PerturbSummary {
        utterances: out.len(),
        from_audio,
        by_condition,
    })
}

fn perturb_audio(
    r: &UtteranceRecord,
    audio: &Path,
    ir: &ImpulseResponse,
    scope: ReverbScope,
    out_base: &Path,
    audio_dir_name: &str,
    index: usize,
) -> Result<UtteranceRecord> {
    let w = Waveform::read_wav(audio).with_context(|| format!("utterance `{}`: reading {}", r.id, audio.display()))?;
    let reverbed = apply_reverb(&w, ir, scope, &r.segments)?;
    let features = stack_downsample(&extract_logmel(&reverbed, &LogMelConfig::default())?)?;
    if features.frames.nrows() != r.features.frames.nrows() {
        bail!(
            "utterance `{}`: re-extracted {} frames, manifest has {}",
            r.id,
            features.frames.nrows(),
            r.features.frames.nrows()
        );
    }
    let rel = format!("{audio_dir_name}/{index:06}.wav");
    let dst = out_base.join(&rel);
    fs::create_dir_all(dst.parent().expect("has a parent"))?;
    reverbed.write_wav(&dst)?;
    let mut out = r.clone();
    out.features = features;
    out.audio = Some(rel);
    out.conditions.remove(&Condition::Clean);
    out.conditions.insert(scope.condition());
    Ok(out)
}
