use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{adam_step, clip_grad_norm, AdamConfig, LrSchedule, TrainState};
use super::{utterance_loss_on, utterance_loss_value, TrainMode, UtteranceLoss};
use crate::dataset::{apply_channel_bias, channel_bias_from_ir, random_channel_ir, ReverbScope, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{spec_augment, AugmentPolicy, StackedFeatures};
use crate::model::{init_params, Checkpoint, ModelConfig, ModelParams};

/// Random channel offsets applied to whole training utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelAugment {
    /// Probability that an utterance is perturbed.
    pub prob: f64,
    /// Scale of the log-power offset.
    pub scale: f64,
}

impl Default for ChannelAugment {
    fn default() -> Self {
        Self { prob: 0.5, scale: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Utterances per batch.
    pub batch_size: usize,
    pub total_steps: u64,
    /// Seeds initialization, batch sampling and augmentation.
    pub seed: u64,
    pub schedule: LrSchedule,
    pub max_grad_norm: Option<f64>,
    pub checkpoint_every: u64,
    pub keep_checkpoints: usize,
    pub augment: Option<AugmentPolicy>,
    pub channel: Option<ChannelAugment>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::FullUtterance,
            batch_size: 16,
            total_steps: 3000,
            seed: 0,
            schedule: LrSchedule::default(),
            max_grad_norm: None,
            checkpoint_every: 250,
            keep_checkpoints: 6,
            augment: None,
            channel: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.keep_checkpoints == 0 {
            return Err(Error::invalid(
                "batch_size, checkpoint_every and keep_checkpoints must be at least 1",
            ));
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::invalid("max_grad_norm must be positive"));
            }
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if let Some(c) = &self.channel {
            if !(0.0..=1.0).contains(&c.prob) || !c.scale.is_finite() {
                return Err(Error::invalid("channel.prob must lie in [0, 1] and channel.scale be finite"));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub mode: TrainMode,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
    pub forward_ms: f64,
    pub backward_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub step: u64,
    pub path: PathBuf,
    pub dev_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub step: u64,
    /// Checkpoints kept on disk, oldest first, with their dev losses.
    pub checkpoints: Vec<CheckpointInfo>,
    /// Lowest dev loss among `checkpoints`, or the latest without a dev set.
    pub best: CheckpointInfo,
    pub steps_run: u64,
    pub mean_wall_ms: f64,
    pub mean_forward_ms: f64,
    pub mean_backward_ms: f64,
}

const CHECKPOINT_PREFIX: &str = "ckpt-";
const CHECKPOINT_SUFFIX: &str = ".sgck";
pub const BEST_CHECKPOINT: &str = "best.sgck";

fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("{CHECKPOINT_PREFIX}{step:08}{CHECKPOINT_SUFFIX}"))
}

fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(step) = name
            .strip_prefix(CHECKPOINT_PREFIX)
            .and_then(|n| n.strip_suffix(CHECKPOINT_SUFFIX))
            .and_then(|n| n.parse::<u64>().ok())
        {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Highest-step periodic checkpoint in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    Ok(list_checkpoints(dir)?.pop())
}

/// Mean utterance objective over `records` under `mode`.
pub fn dev_loss(params: &ModelParams, records: &[UtteranceRecord], mode: TrainMode) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("dev set is empty"));
    }
    let losses: Vec<f64> = records
        .par_iter()
        .map(|r| {
            let x = r.features.frames.mapv(f64::from);
            utterance_loss_value(params, &r.id, x.view(), &r.segments, mode)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn check_records(config: &ModelConfig, records: &[UtteranceRecord]) -> Result<()> {
    for r in records {
        let fail = |message: String| Error::Record {
            id: r.id.clone(),
            message,
        };
        if r.features.frames.ncols() != config.input_dim {
            return Err(fail(format!(
                "feature width {} differs from model input_dim {}",
                r.features.frames.ncols(),
                config.input_dim
            )));
        }
        if r.labeled_segments().next().is_none() {
            return Err(fail("no labeled segment to train on".into()));
        }
        for (_, s) in r.labeled_segments() {
            config
                .check_labels(s.labels.as_deref().unwrap_or_default())
                .map_err(|e| fail(e.to_string()))?;
        }
    }
    Ok(())
}

fn slot_rng(seed: u64, step: u64, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_A06E_17A7_10E5);
    rng.set_stream((step << 20) | slot as u64);
    rng
}

/// Training-time view of one utterance: channel offset on the whole
/// utterance, then SpecAugment per training unit.
fn augmented_features(r: &UtteranceRecord, cfg: &TrainConfig, step: u64, slot: usize) -> Result<Array2<f64>> {
    let mut rng = slot_rng(cfg.seed, step, slot);
    let mut record;
    let mut src = r;
    if let Some(ch) = &cfg.channel {
        if rng.random_bool(ch.prob) {
            let taps = random_channel_ir(&mut rng);
            let bias = channel_bias_from_ir(&taps, r.features.base_dim, ch.scale);
            record = r.clone();
            apply_channel_bias(&mut record, &bias, ReverbScope::FullUtterance)?;
            src = &record;
        }
    }
    let mut x = src.features.frames.clone();
    if let Some(policy) = &cfg.augment {
        let base_seed: u64 = rng.random();
        let spans: Vec<(usize, usize)> = match cfg.mode {
            TrainMode::Segmented => src.labeled_segments().map(|(_, s)| (s.start, s.end)).collect(),
            TrainMode::FullUtterance => vec![(0, src.last_labeled_end().unwrap_or(0))],
        };
        for (k, (a, b)) in spans.into_iter().enumerate() {
            let unit = StackedFeatures {
                frames: x.slice(s![a..=b, ..]).to_owned(),
                base_dim: src.features.base_dim,
                factor: src.features.factor,
            };
            let masked = spec_augment(&unit, &policy.with_seed(base_seed.wrapping_add(k as u64)))?;
            x.slice_mut(s![a..=b, ..]).assign(&masked.frames);
        }
    }
    Ok(x.mapv(f64::from))
}

fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    let mut idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
    idx.sort_unstable();
    idx
}

fn save_state(state: &TrainState, mode: TrainMode, path: &Path) -> Result<()> {
    Checkpoint {
        config: state.params.config.clone(),
        step: state.step,
        mode: Some(mode),
        params: state.params.clone(),
        moments: Some((state.m.clone(), state.v.clone())),
    }
    .save(path)
}

fn resume_state(path: &Path, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainState> {
    let ck = Checkpoint::load(path)?;
    if &ck.config != model {
        return Err(Error::Checkpoint(format!(
            "{}: model config differs from the requested one",
            path.display()
        )));
    }
    if ck.mode.is_some_and(|m| m != cfg.mode) {
        return Err(Error::Checkpoint(format!(
            "{}: trained with mode {}, asked to resume with {}",
            path.display(),
            ck.mode.map(|m| m.to_string()).unwrap_or_default(),
            cfg.mode
        )));
    }
    let (m, v) = ck
        .moments
        .ok_or_else(|| Error::Checkpoint(format!("{}: no optimizer state to resume from", path.display())))?;
    Ok(TrainState {
        params: ck.params,
        m,
        v,
        step: ck.step,
        seed: cfg.seed,
    })
}

/// Trains `model` on `train_set`, writing periodic checkpoints to `out_dir`
/// and one JSON line per step to `log`.
///
/// Batches are drawn uniformly with replacement from a per-step stream, and
/// per-utterance gradients are reduced in ascending utterance-index order,
/// so a run is a deterministic function of its inputs and seed. With
/// `resume`, training continues from the latest checkpoint in `out_dir`.
pub fn train(
    model: &ModelConfig,
    train_set: &[UtteranceRecord],
    dev_set: &[UtteranceRecord],
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: bool,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training manifest is empty"));
    }
    check_records(model, train_set)?;
    check_records(model, dev_set)?;
    fs::create_dir_all(out_dir)?;

    let mut state = match latest_checkpoint(out_dir)? {
        Some((_, path)) if resume => resume_state(&path, model, cfg)?,
        _ => TrainState::new(init_params(model, cfg.seed)?, cfg.seed),
    };
    let adam = AdamConfig::default();
    let b = cfg.batch_size as f64;
    let (mut wall, mut fwd, mut bwd) = (0.0, 0.0, 0.0);
    let mut steps_run = 0u64;

    while state.step < cfg.total_steps {
        let step = state.step + 1;
        let started = Instant::now();
        let idx = batch_indices(cfg.seed, step, train_set.len(), cfg.batch_size);
        let results: Vec<UtteranceLoss> = idx
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let r = &train_set[i];
                let x = augmented_features(r, cfg, step, slot)?;
                utterance_loss_on(&state.params, &r.id, x.view(), &r.segments, cfg.mode)
            })
            .collect::<Result<_>>()?;
        let mut grads = state.params.zeros_like();
        let mut loss = 0.0;
        let (mut f_ms, mut b_ms) = (0.0, 0.0);
        for r in &results {
            grads.add_assign(&r.grads);
            loss += r.loss;
            f_ms += r.timing.forward.as_secs_f64() * 1e3;
            b_ms += r.timing.backward.as_secs_f64() * 1e3;
        }
        grads.scale(1.0 / b);
        loss /= b;
        if let Some(max) = cfg.max_grad_norm {
            clip_grad_norm(&mut grads, max);
        }
        let lr = adam_step(&mut state, &grads, &cfg.schedule, &adam)?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        wall += wall_ms;
        fwd += f_ms;
        bwd += b_ms;
        steps_run += 1;
        let line = StepLog {
            step,
            mode: cfg.mode,
            loss,
            lr,
            wall_ms,
            forward_ms: f_ms,
            backward_ms: b_ms,
        };
        serde_json::to_writer(&mut *log, &line).map_err(std::io::Error::from)?;
        writeln!(log)?;

        if step % cfg.checkpoint_every == 0 || step == cfg.total_steps {
            save_state(&state, cfg.mode, &checkpoint_path(out_dir, step))?;
            let all = list_checkpoints(out_dir)?;
            let excess = all.len().saturating_sub(cfg.keep_checkpoints);
            for (_, old) in &all[..excess] {
                fs::remove_file(old)?;
            }
        }
    }
    if list_checkpoints(out_dir)?.is_empty() {
        save_state(&state, cfg.mode, &checkpoint_path(out_dir, state.step))?;
    }

    let mut checkpoints = Vec::new();
    for (step, path) in list_checkpoints(out_dir)? {
        let dev = if dev_set.is_empty() {
            None
        } else {
            let params = Checkpoint::load(&path)?.params;
            Some(dev_loss(&params, dev_set, cfg.mode)?)
        };
        checkpoints.push(CheckpointInfo {
            step,
            path,
            dev_loss: dev,
        });
    }
    let best = checkpoints
        .iter()
        .min_by(|a, b| match (a.dev_loss, b.dev_loss) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => b.step.cmp(&a.step),
        })
        .expect("at least one checkpoint")
        .clone();
    let best_path = out_dir.join(BEST_CHECKPOINT);
    fs::copy(&best.path, &best_path)?;
    let n = steps_run.max(1) as f64;
    Ok(TrainOutcome {
        params: state.params,
        step: state.step,
        checkpoints,
        best: CheckpointInfo {
            path: best_path,
            ..best
        },
        steps_run,
        mean_wall_ms: wall / n,
        mean_forward_ms: fwd / n,
        mean_backward_ms: bwd / n,
    })
}
