//! Synthetic context-cue task.
//!
//! Feature columns are `[cue dims (K) | content dims (C)]`. The untranscribed
//! prefix carries a cue vector `magnitude * e_c` in the cue dims over silent
//! content. The transcribed segment carries symbol prototypes in the content
//! dims and nothing in the cue dims. For an ambiguous symbol the target label
//! is a cue-dependent bijection over the ambiguous subset, so without the
//! prefix its label is uniform over `K` candidates.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Condition, SegmentRecord, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::StackedFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextCueSpec {
    /// Inclusive range of prefix lengths in frames.
    pub prefix_len_range: (usize, usize),
    /// Inclusive range of transcribed-segment lengths in frames.
    pub segment_len_range: (usize, usize),
    pub cue_code_count: usize,
    pub cue_bias_magnitude: f64,
    pub n_symbols: usize,
    pub ambiguous_fraction: f64,
    pub noise_std: f64,
    pub content_dim: usize,
    /// L2 norm of each symbol prototype.
    pub symbol_norm: f64,
    /// Inclusive range of frames per symbol; symbols are separated by one
    /// silent frame.
    pub symbol_frames: (usize, usize),
    /// Scale of the interfering prototypes in `background_speech` prefixes.
    pub background_level: f64,
    pub rng_seed: u64,
}

impl Default for ContextCueSpec {
    fn default() -> Self {
        Self {
            prefix_len_range: (40, 120),
            segment_len_range: (20, 60),
            cue_code_count: 2,
            cue_bias_magnitude: 1.0,
            n_symbols: 8,
            ambiguous_fraction: 0.5,
            noise_std: 0.3,
            content_dim: 10,
            symbol_norm: 2.0,
            symbol_frames: (2, 4),
            background_level: 0.5,
            rng_seed: 0,
        }
    }
}

impl ContextCueSpec {
    pub fn feature_dim(&self) -> usize {
        self.cue_code_count + self.content_dim
    }

    /// Blank plus one label per symbol.
    pub fn min_vocab_size(&self) -> usize {
        self.n_symbols + 1
    }

    pub fn n_ambiguous(&self) -> usize {
        (self.ambiguous_fraction * self.n_symbols as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.cue_code_count < 2 {
            return bad(format!("cue_code_count must be at least 2, got {}", self.cue_code_count));
        }
        if !(0.0..=1.0).contains(&self.ambiguous_fraction) {
            return bad(format!("ambiguous_fraction {} is outside [0, 1]", self.ambiguous_fraction));
        }
        if self.n_symbols == 0 || self.content_dim == 0 {
            return bad("n_symbols and content_dim must be positive".into());
        }
        let n_amb = self.n_ambiguous();
        if n_amb > 0 && n_amb < self.cue_code_count {
            return bad(format!(
                "{n_amb} ambiguous symbols cannot carry {} distinct cue-dependent labels",
                self.cue_code_count
            ));
        }
        let (p0, p1) = self.prefix_len_range;
        let (s0, s1) = self.segment_len_range;
        let (f0, f1) = self.symbol_frames;
        if p0 == 0 || p0 > p1 || s0 == 0 || s0 > s1 || f0 == 0 || f0 > f1 {
            return bad("length ranges must be non-empty with a positive lower bound".into());
        }
        for (name, v) in [
            ("cue_bias_magnitude", self.cue_bias_magnitude),
            ("noise_std", self.noise_std),
            ("symbol_norm", self.symbol_norm),
            ("background_level", self.background_level),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Dev,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Dev => "dev",
            SplitKind::Test => "test",
        }
    }

    /// Splits draw from disjoint utterance-index ranges.
    fn index_offset(self) -> u64 {
        match self {
            SplitKind::Train => 0,
            SplitKind::Dev => 1 << 40,
            SplitKind::Test => 2 << 40,
        }
    }
}

/// Ground truth for one emitted token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenInfo {
    pub symbol: usize,
    pub label: u32,
    pub ambiguous: bool,
}

/// Fixed structure of a task instance: prototypes and the label tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTask {
    pub spec: ContextCueSpec,
    /// `n_symbols x content_dim`
    pub prototypes: Array2<f64>,
    pub ambiguous: Vec<bool>,
    /// `labels[symbol][cue]`
    pub labels: Vec<Vec<u32>>,
}

impl ContextTask {
    pub fn new(spec: &ContextCueSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(1);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut prototypes = Array2::<f64>::zeros((spec.n_symbols, spec.content_dim));
        for mut row in prototypes.rows_mut() {
            row.mapv_inplace(|_| normal.sample(&mut rng));
            let norm: f64 = row.dot(&row).sqrt().max(1e-12);
            row.mapv_inplace(|v| v * spec.symbol_norm / norm);
        }
        let mut order: Vec<usize> = (0..spec.n_symbols).collect();
        order.shuffle(&mut rng);
        let mut amb_set: Vec<usize> = order[..spec.n_ambiguous()].to_vec();
        amb_set.sort_unstable();
        let mut ambiguous = vec![false; spec.n_symbols];
        for &s in &amb_set {
            ambiguous[s] = true;
        }
        let labels = (0..spec.n_symbols)
            .map(|s| {
                (0..spec.cue_code_count)
                    .map(|c| match amb_set.iter().position(|&a| a == s) {
                        Some(i) => (amb_set[(i + c) % amb_set.len()] + 1) as u32,
                        None => (s + 1) as u32,
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            prototypes,
            ambiguous,
            labels,
        })
    }

    /// True when `label` is emitted by an ambiguous symbol; the label maps
    /// are bijections on the ambiguous subset so this is well defined.
    pub fn is_ambiguous_label(&self, label: u32) -> bool {
        label >= 1 && self.ambiguous.get(label as usize - 1).copied().unwrap_or(false)
    }

    /// Utterance `index` of a split under one evaluation condition.
    pub fn utterance(
        &self,
        split: SplitKind,
        index: u64,
        condition: Condition,
    ) -> Result<(UtteranceRecord, Vec<TokenInfo>)> {
        let spec = &self.spec;
        if !matches!(
            condition,
            Condition::Clean | Condition::BackgroundSpeech | Condition::SpeakerChange
        ) {
            return Err(Error::invalid(format!(
                "condition `{condition}` is produced by perturbation, not generation"
            )));
        }
        let k = spec.cue_code_count;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ (split.index_offset() + index));
        let cue = rng.random_range(0..k);
        let prefix = rng.random_range(spec.prefix_len_range.0..=spec.prefix_len_range.1);
        let seg_len = rng.random_range(spec.segment_len_range.0..=spec.segment_len_range.1);
        let t = prefix + seg_len;
        let mut x = Array2::<f64>::zeros((t, spec.feature_dim()));

        for i in 0..prefix {
            x[[i, cue]] += spec.cue_bias_magnitude;
        }
        if condition == Condition::BackgroundSpeech {
            for start in (0..prefix).step_by(3) {
                if rng.random_bool(0.5) {
                    let s = rng.random_range(0..spec.n_symbols);
                    for i in start..(start + 3).min(prefix) {
                        for d in 0..spec.content_dim {
                            x[[i, k + d]] += spec.background_level * self.prototypes[[s, d]];
                        }
                    }
                }
            }
        }
        let seg_cue = if condition == Condition::SpeakerChange {
            let c2 = (cue + 1 + rng.random_range(0..k - 1)) % k;
            for i in prefix..t {
                x[[i, c2]] += spec.cue_bias_magnitude;
            }
            c2
        } else {
            cue
        };

        let mut pos = prefix + rng.random_range(0..=2usize.min(seg_len - 1));
        let mut labels = Vec::new();
        let mut tokens = Vec::new();
        loop {
            let dur = rng.random_range(spec.symbol_frames.0..=spec.symbol_frames.1);
            if pos + dur > t {
                break;
            }
            let s = rng.random_range(0..spec.n_symbols);
            for i in pos..pos + dur {
                for d in 0..spec.content_dim {
                    x[[i, k + d]] += self.prototypes[[s, d]];
                }
            }
            let label = self.labels[s][seg_cue];
            labels.push(label);
            tokens.push(TokenInfo {
                symbol: s,
                label,
                ambiguous: self.ambiguous[s],
            });
            pos += dur + 1;
        }

        let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
        if spec.noise_std > 0.0 {
            x.mapv_inplace(|v| v + noise.sample(&mut rng));
        }
        let record = UtteranceRecord {
            id: match condition {
                Condition::Clean => format!("{}-{index:06}", split.name()),
                c => format!("{}-{c}-{index:06}", split.name()),
            },
            features: StackedFeatures::unstacked(x.mapv(|v| v as f32)),
            segments: vec![
                SegmentRecord::unlabeled(0, prefix - 1),
                SegmentRecord::labeled(prefix, t - 1, labels),
            ],
            conditions: [condition].into(),
            audio: None,
        };
        Ok((record, tokens))
    }
}

/// `n` utterances of one split under one condition, indices `0..n`.
pub fn generate_split(
    spec: &ContextCueSpec,
    split: SplitKind,
    n: usize,
    condition: Condition,
) -> Result<Vec<UtteranceRecord>> {
    let task = ContextTask::new(spec)?;
    (0..n as u64)
        .map(|i| task.utterance(split, i, condition).map(|(r, _)| r))
        .collect()
}

/// Clean training utterances.
pub fn generate_context_task(spec: &ContextCueSpec, n_utterances: usize) -> Result<Vec<UtteranceRecord>> {
    generate_split(spec, SplitKind::Train, n_utterances, Condition::Clean)
}
