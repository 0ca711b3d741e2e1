//! Run configuration.
//!
//! A TOML file with the sections `[model]`, `[train]`, `[schedule]`,
//! `[augment]`, `[channel]`, `[data]` (plus `[data.task]`), `[decode]` and
//! `[perturb]`. Every key has a default and unknown keys are rejected. The
//! `[augment]` and `[channel]` sections are optional: leaving one out
//! disables that augmentation, an empty one enables it with defaults.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ctxrnnt::dataset::{Condition, ContextCueSpec};
use ctxrnnt::decode::SearchConfig;
use ctxrnnt::features::AugmentPolicy;
use ctxrnnt::model::ModelConfig;
use ctxrnnt::training::{ChannelAugment, LrSchedule, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "CTXRNNT_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSection,
    pub schedule: LrSchedule,
    pub data: DataSection,
    pub decode: DecodeSection,
    pub perturb: PerturbSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelAugment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    pub checkpoint_every: u64,
    pub keep_checkpoints: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: t.mode,
            batch_size: t.batch_size,
            total_steps: t.total_steps,
            seed: t.seed,
            max_grad_norm: t.max_grad_norm,
            checkpoint_every: t.checkpoint_every,
            keep_checkpoints: t.keep_checkpoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_train: usize,
    pub n_dev: usize,
    /// Test utterances per condition.
    pub n_test: usize,
    pub test_conditions: Vec<Condition>,
    pub task: ContextCueSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_dev: 100,
            n_test: 200,
            test_conditions: vec![Condition::Clean, Condition::BackgroundSpeech, Condition::SpeakerChange],
            task: ContextCueSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam_width: usize,
    pub max_symbols_per_frame: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            beam_width: 4,
            max_symbols_per_frame: ctxrnnt::decode::MAX_SYMBOLS_PER_FRAME,
        }
    }
}

impl DecodeSection {
    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            beam_width: self.beam_width,
            max_symbols_per_frame: self.max_symbols_per_frame,
            max_output_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSection {
    /// Scale of the feature-domain channel offset for records without audio.
    pub channel_scale: f64,
}

impl Default for PerturbSection {
    fn default() -> Self {
        Self { channel_scale: 1.0 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or the file named by `CTXRNNT_CONFIG`, or falls back to
    /// the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty());
        let path = path.map(Path::to_path_buf).or(env.map(Into::into));
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("invalid config {}", p.display()))
            }
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            mode: t.mode,
            batch_size: t.batch_size,
            total_steps: t.total_steps,
            seed: t.seed,
            schedule: self.schedule.clone(),
            max_grad_norm: t.max_grad_norm,
            checkpoint_every: t.checkpoint_every,
            keep_checkpoints: t.keep_checkpoints,
            augment: self.augment.clone(),
            channel: self.channel.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate()?;
        self.data.task.validate()?;
        ensure!(self.decode.beam_width >= 1, "decode.beam_width must be at least 1");
        ensure!(
            self.decode.max_symbols_per_frame >= 1,
            "decode.max_symbols_per_frame must be at least 1"
        );
        ensure!(
            self.perturb.channel_scale.is_finite() && self.perturb.channel_scale >= 0.0,
            "perturb.channel_scale must be finite and non-negative"
        );
        for c in &self.data.test_conditions {
            if matches!(c, Condition::ReverbFull | Condition::ReverbSegment) {
                bail!("data.test_conditions: `{c}` is produced by the perturb command");
            }
        }
        Ok(())
    }

    /// Checks that the model can consume the synthetic task.
    pub fn check_task_fits_model(&self) -> Result<()> {
        let task = &self.data.task;
        ensure!(
            self.model.input_dim == task.feature_dim(),
            "model.input_dim is {} but the task produces {} feature columns",
            self.model.input_dim,
            task.feature_dim()
        );
        ensure!(
            self.model.vocab_size >= task.min_vocab_size(),
            "model.vocab_size is {} but the task needs at least {}",
            self.model.vocab_size,
            task.min_vocab_size()
        );
        Ok(())
    }
}
