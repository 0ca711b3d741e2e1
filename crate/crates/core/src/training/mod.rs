//! Segmented and full-utterance objectives, Adam, and the training loop.
//!
//! Both objectives sum per-segment transducer losses over the labeled
//! segments of an utterance and restart the prediction network at every
//! segment. They differ only in what the encoder sees:
//!
//! * [`TrainMode::Segmented`]: each labeled segment's frames alone, from a
//!   zero state.
//! * [`TrainMode::FullUtterance`]: frames `0..=t_max` in one pass, where
//!   `t_max` is the last labeled end frame; each segment's loss reads the
//!   slice `h[t_S..=t_E]` of that pass.

mod optim;
mod trainer;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{SegmentRecord, UtteranceRecord};
use crate::error::{Error, Result};
use crate::loss::rnnt_loss;
use crate::model::{
    encoder_backward, encoder_forward, joint_backward, joint_forward, prediction_backward, prediction_forward,
    ModelParams,
};

pub use optim::{adam_step, clip_grad_norm, AdamConfig, LrSchedule, TrainState};
pub use trainer::{
    dev_loss, latest_checkpoint, train, ChannelAugment, BEST_CHECKPOINT, CheckpointInfo, StepLog, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Segmented,
    FullUtterance,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Segmented => "segmented",
            TrainMode::FullUtterance => "full_utterance",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segmented" | "segment" => Ok(TrainMode::Segmented),
            "full" | "full_utterance" => Ok(TrainMode::FullUtterance),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected segmented or full_utterance)"
            ))),
        }
    }
}

/// Wall time of the two phases of one objective evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTiming {
    pub forward: Duration,
    pub backward: Duration,
}

impl std::ops::AddAssign for PhaseTiming {
    fn add_assign(&mut self, o: Self) {
        self.forward += o.forward;
        self.backward += o.backward;
    }
}

#[derive(Debug, Clone)]
pub struct UtteranceLoss {
    /// Sum of the per-segment losses.
    pub loss: f64,
    /// Loss of each labeled segment, in segment order.
    pub segment_losses: Vec<f64>,
    pub grads: ModelParams,
    /// Gradient w.r.t. every input frame, `T x input_dim`.
    pub dx: Array2<f64>,
    pub timing: PhaseTiming,
}

fn check_segments(id: &str, t_len: usize, segments: &[SegmentRecord]) -> Result<()> {
    let mut any = false;
    for (i, s) in segments.iter().enumerate() {
        if s.start > s.end || s.end >= t_len {
            return Err(Error::Record {
                id: id.to_string(),
                message: format!("segment {i} [{}, {}] is out of range for {t_len} frames", s.start, s.end),
            });
        }
        any |= s.labels.is_some();
    }
    if !any {
        return Err(Error::Record {
            id: id.to_string(),
            message: "no labeled segment to train on".into(),
        });
    }
    Ok(())
}

struct SegmentPass {
    loss: f64,
    /// Gradient w.r.t. the encoder rows of the segment.
    dh: Array2<f64>,
}

/// Loss of one segment given its encoder rows; accumulates prediction and
/// joint gradients.
fn segment_pass(
    params: &ModelParams,
    h: ArrayView2<'_, f64>,
    labels: &[u32],
    grads: &mut ModelParams,
    timing: &mut PhaseTiming,
) -> Result<SegmentPass> {
    let t0 = Instant::now();
    let (g, pcaches) = prediction_forward(params, labels)?;
    let (z, jcache) = joint_forward(params, h, g.view())?;
    let r = rnnt_loss(z.z.view(), labels)?;
    let t1 = Instant::now();
    let (dh, dg) = joint_backward(params, &jcache, r.dlogits.view(), grads);
    prediction_backward(params, labels, &pcaches, dg.view(), grads);
    timing.forward += t1 - t0;
    timing.backward += t1.elapsed();
    Ok(SegmentPass { loss: r.loss, dh })
}

/// Objective and gradients on an explicit feature matrix.
pub fn utterance_loss_on(
    params: &ModelParams,
    id: &str,
    x: ArrayView2<'_, f64>,
    segments: &[SegmentRecord],
    mode: TrainMode,
) -> Result<UtteranceLoss> {
    check_segments(id, x.nrows(), segments)?;
    let mut grads = params.zeros_like();
    let mut dx = Array2::<f64>::zeros(x.dim());
    let mut timing = PhaseTiming::default();
    let mut segment_losses = Vec::new();
    let labeled: Vec<(&SegmentRecord, &[u32])> = segments
        .iter()
        .filter_map(|s| s.labels.as_deref().map(|l| (s, l)))
        .collect();

    match mode {
        TrainMode::Segmented => {
            for (s, labels) in labeled {
                let t0 = Instant::now();
                let (h, caches) = encoder_forward(params, x.slice(s![s.start..=s.end, ..]))?;
                timing.forward += t0.elapsed();
                let pass = segment_pass(params, h.view(), labels, &mut grads, &mut timing)?;
                let t1 = Instant::now();
                let d = encoder_backward(params, &caches, pass.dh.view(), &mut grads);
                dx.slice_mut(s![s.start..=s.end, ..]).assign(&d);
                timing.backward += t1.elapsed();
                segment_losses.push(pass.loss);
            }
        }
        TrainMode::FullUtterance => {
            let t_max = labeled.iter().map(|(s, _)| s.end).max().expect("checked non-empty");
            let t0 = Instant::now();
            let (h, caches) = encoder_forward(params, x.slice(s![..=t_max, ..]))?;
            timing.forward += t0.elapsed();
            let mut dh = Array2::<f64>::zeros(h.dim());
            for (s, labels) in labeled {
                let rows = s![s.start..=s.end, ..];
                let pass = segment_pass(params, h.slice(rows), labels, &mut grads, &mut timing)?;
                let mut dst = dh.slice_mut(rows);
                dst += &pass.dh;
                segment_losses.push(pass.loss);
            }
            let t1 = Instant::now();
            let d = encoder_backward(params, &caches, dh.view(), &mut grads);
            dx.slice_mut(s![..=t_max, ..]).assign(&d);
            timing.backward += t1.elapsed();
        }
    }
    Ok(UtteranceLoss {
        loss: segment_losses.iter().sum(),
        segment_losses,
        grads,
        dx,
        timing,
    })
}

/// Objective value only, without the backward pass.
pub fn utterance_loss_value(
    params: &ModelParams,
    id: &str,
    x: ArrayView2<'_, f64>,
    segments: &[SegmentRecord],
    mode: TrainMode,
) -> Result<f64> {
    check_segments(id, x.nrows(), segments)?;
    let segment_loss = |h: ArrayView2<'_, f64>, labels: &[u32]| -> Result<f64> {
        let (g, _) = prediction_forward(params, labels)?;
        let (z, _) = joint_forward(params, h, g.view())?;
        Ok(rnnt_loss(z.z.view(), labels)?.loss)
    };
    let labeled = segments.iter().filter_map(|s| s.labels.as_deref().map(|l| (s, l)));
    let mut total = 0.0;
    match mode {
        TrainMode::Segmented => {
            for (s, labels) in labeled {
                let (h, _) = encoder_forward(params, x.slice(s![s.start..=s.end, ..]))?;
                total += segment_loss(h.view(), labels)?;
            }
        }
        TrainMode::FullUtterance => {
            let t_max = segments.iter().filter(|s| s.labels.is_some()).map(|s| s.end).max().expect("checked");
            let (h, _) = encoder_forward(params, x.slice(s![..=t_max, ..]))?;
            for (s, labels) in labeled {
                total += segment_loss(h.slice(s![s.start..=s.end, ..]), labels)?;
            }
        }
    }
    Ok(total)
}

/// Objective and gradients for one utterance record.
pub fn utterance_loss(params: &ModelParams, u: &UtteranceRecord, mode: TrainMode) -> Result<UtteranceLoss> {
    let x = u.features.frames.mapv(f64::from);
    utterance_loss_on(params, &u.id, x.view(), &u.segments, mode)
}
