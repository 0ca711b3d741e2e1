//! Reverberation on waveforms and its feature-domain surrogate.
//!
//! The surrogate turns an impulse response `h` into a per-bin log-power offset
//! `scale * ln(|H(w_d)|^2 / sum(h^2))` evaluated at `w_d = pi (d + 1/2) / D`,
//! which is what a stationary channel adds to log filterbank energies once the
//! signal power is renormalized. A unit impulse, or any single tap, yields a
//! zero offset.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{Condition, SegmentRecord, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{Waveform, ENCODER_FRAME_MS};

/// Per-bin offsets are clipped to this magnitude before scaling.
pub const CHANNEL_LOG_CLAMP: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("impulse response has non-finite taps"));
        }
        if taps.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("impulse response needs at least one nonzero tap"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("impulse response sample rate must be positive"));
        }
        Ok(Self { taps, sample_rate })
    }

    /// A `.wav` file, or a text file of whitespace-separated taps with an
    /// optional leading `sample_rate=<hz>` token (default 16000).
    pub fn read(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            let w = Waveform::read_wav(path)?;
            return Self::new(w.samples, w.sample_rate);
        }
        let text = std::fs::read_to_string(path)?;
        let mut sample_rate = 16000;
        let mut taps = Vec::new();
        for tok in text.split_whitespace() {
            if let Some(sr) = tok.strip_prefix("sample_rate=") {
                sample_rate = sr
                    .parse()
                    .map_err(|_| Error::invalid(format!("{}: bad sample rate `{sr}`", path.display())))?;
            } else {
                taps.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("{}: bad tap `{tok}`", path.display())))?,
                );
            }
        }
        Self::new(taps, sample_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverbScope {
    FullUtterance,
    SegmentsOnly,
}

impl ReverbScope {
    pub fn condition(self) -> Condition {
        match self {
            ReverbScope::FullUtterance => Condition::ReverbFull,
            ReverbScope::SegmentsOnly => Condition::ReverbSegment,
        }
    }
}

impl FromStr for ReverbScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_utterance" => Ok(ReverbScope::FullUtterance),
            "segments" | "segments_only" => Ok(ReverbScope::SegmentsOnly),
            other => Err(Error::invalid(format!(
                "unknown scope `{other}` (expected full_utterance or segments_only)"
            ))),
        }
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// First `out_len` samples of `x * h`.
fn convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if h.len() <= 64 || x.len() <= 64 {
        return (0..out_len)
            .map(|n| {
                let lo = n.saturating_sub(x.len() - 1);
                (lo..=n.min(h.len() - 1)).map(|k| h[k] * x[n - k]).sum()
            })
            .collect();
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        b.resize(n, Complex::new(0.0, 0.0));
        b
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(out_len).map(|c| c.re / n as f64).collect()
}

/// Convolves and rescales `x` in place so its power is unchanged.
fn reverb_span(x: &mut [f64], h: &[f64]) {
    let p_in = power(x);
    let mut y = convolve(x, h, x.len());
    let p_out = power(&y);
    if p_in > 0.0 && p_out > 0.0 {
        let g = (p_in / p_out).sqrt();
        y.iter_mut().for_each(|v| *v *= g);
    }
    x.copy_from_slice(&y);
}

/// Convolves `w` with `ir` and renormalizes power. With
/// [`ReverbScope::SegmentsOnly`] each labeled segment is convolved on its own,
/// its tail cut at the segment end and its power restored, so samples outside
/// the labeled spans are untouched and the total power is preserved.
pub fn apply_reverb(
    w: &Waveform,
    ir: &ImpulseResponse,
    scope: ReverbScope,
    segs: &[SegmentRecord],
) -> Result<Waveform> {
    if ir.sample_rate != w.sample_rate {
        return Err(Error::invalid(format!(
            "impulse response rate {} Hz differs from waveform rate {} Hz",
            ir.sample_rate, w.sample_rate
        )));
    }
    let mut out = w.samples.clone();
    match scope {
        ReverbScope::FullUtterance => reverb_span(&mut out, &ir.taps),
        ReverbScope::SegmentsOnly => {
            let labeled: Vec<&SegmentRecord> = segs.iter().filter(|s| s.labels.is_some()).collect();
            if labeled.is_empty() {
                return Err(Error::invalid("segment-scope reverb needs at least one labeled segment"));
            }
            let per_frame = w.sample_rate as usize * ENCODER_FRAME_MS as usize / 1000;
            for s in labeled {
                let a = (s.start * per_frame).min(out.len());
                let b = ((s.end + 1) * per_frame).min(out.len());
                if a < b {
                    reverb_span(&mut out[a..b], &ir.taps);
                }
            }
        }
    }
    Waveform::new(out, w.sample_rate)
}

/// Log-power offset per bin for `bins` bins spread over `(0, pi)`.
pub fn channel_bias_from_ir(taps: &[f64], bins: usize, scale: f64) -> Vec<f64> {
    let energy = power(taps).max(f64::MIN_POSITIVE);
    (0..bins)
        .map(|d| {
            let w = PI * (d as f64 + 0.5) / bins as f64;
            let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &h)| {
                let a = w * n as f64;
                (re + h * a.cos(), im - h * a.sin())
            });
            let ratio = ((re * re + im * im) / energy).max(f64::MIN_POSITIVE);
            scale * ratio.ln().clamp(-CHANNEL_LOG_CLAMP, CHANNEL_LOG_CLAMP)
        })
        .collect()
}

/// Adds `bias` (one value per base bin, repeated in every stacked copy) to
/// the frames selected by `scope`.
pub fn apply_channel_bias(record: &mut UtteranceRecord, bias: &[f64], scope: ReverbScope) -> Result<()> {
    let f = &mut record.features;
    if bias.len() != f.base_dim {
        return Err(Error::DimensionMismatch {
            what: "channel bias",
            expected: f.base_dim,
            actual: bias.len(),
        });
    }
    let rows: Vec<usize> = match scope {
        ReverbScope::FullUtterance => (0..f.frames.nrows()).collect(),
        ReverbScope::SegmentsOnly => {
            let rows: Vec<usize> = record
                .segments
                .iter()
                .filter(|s| s.labels.is_some())
                .flat_map(|s| s.start..=s.end)
                .collect();
            if rows.is_empty() {
                return Err(Error::Record {
                    id: record.id.clone(),
                    message: "segment-scope perturbation needs a labeled segment".into(),
                });
            }
            rows
        }
    };
    for t in rows {
        let mut row = f.frames.row_mut(t);
        for copy in 0..f.factor {
            for (d, b) in bias.iter().enumerate() {
                let v = &mut row[copy * f.base_dim + d];
                *v = (f64::from(*v) + b) as f32;
            }
        }
    }
    Ok(())
}

/// Feature-domain reverb surrogate for records without audio; retags the
/// record with the scope's condition.
pub fn perturb_record(
    record: &UtteranceRecord,
    ir: &ImpulseResponse,
    scope: ReverbScope,
    channel_scale: f64,
) -> Result<UtteranceRecord> {
    let mut out = record.clone();
    let bias = channel_bias_from_ir(&ir.taps, out.features.base_dim, channel_scale);
    apply_channel_bias(&mut out, &bias, scope)?;
    retag(&mut out.conditions, scope);
    Ok(out)
}

pub(crate) fn retag(conditions: &mut BTreeSet<Condition>, scope: ReverbScope) {
    conditions.remove(&Condition::Clean);
    conditions.insert(scope.condition());
}

/// A random room-like response: unit direct path followed by a tail of
/// exponentially decaying Gaussian reflections. The tail is long enough that
/// the per-bin response is irregular rather than a smooth tilt.
pub fn random_channel_ir<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let n = rng.random_range(8..=32usize);
    let decay: f64 = rng.random_range(0.75..0.95);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut taps = vec![1.0];
    for k in 1..n {
        taps.push(normal.sample(rng) * decay.powi(k as i32));
    }
    taps
}
