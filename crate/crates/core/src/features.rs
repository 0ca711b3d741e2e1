//! Log-mel front end, frame stacking and adaptive SpecAugment.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MEL_BINS: usize = 64;
pub const FRAME_SHIFT_MS: u32 = 10;
pub const STACK_FACTOR: usize = 3;
pub const ENCODER_FRAME_MS: u32 = FRAME_SHIFT_MS * STACK_FACTOR as u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Reads 16-bit signed PCM mono; samples are scaled to [-1, 1).
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::invalid(format!(
                "{}: expected 16-bit PCM mono, got {} channel(s) of {}-bit {:?}",
                path.display(),
                spec.channels,
                spec.bits_per_sample,
                spec.sample_format
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 16-bit signed PCM mono, clipping to the representable range.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(v)?;
        }
        w.finalize()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureOrigin {
    Extracted,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f32>,
    pub frame_shift_ms: u32,
    pub origin: FeatureOrigin,
}

impl FeatureMatrix {
    pub fn synthetic(frames: Array2<f32>) -> Self {
        Self {
            frames,
            frame_shift_ms: FRAME_SHIFT_MS,
            origin: FeatureOrigin::Synthetic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedFeatures {
    /// `T x (factor * base_dim)`; copy `j` of a base bin `d` is column `j * base_dim + d`.
    pub frames: Array2<f32>,
    pub base_dim: usize,
    pub factor: usize,
}

impl StackedFeatures {
    /// Treats an already-prepared matrix as a single-copy stack, as used by
    /// the synthetic tasks.
    pub fn unstacked(frames: Array2<f32>) -> Self {
        let base_dim = frames.ncols();
        Self {
            frames,
            base_dim,
            factor: 1,
        }
    }

    pub fn encoder_frame_ms(&self) -> u32 {
        FRAME_SHIFT_MS * self.factor as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogMelConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub f_min: f64,
    /// `None` means Nyquist.
    pub f_max: Option<f64>,
    pub log_floor: f64,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: FRAME_SHIFT_MS as f64,
            n_mels: MEL_BINS,
            f_min: 20.0,
            f_max: None,
            log_floor: 1e-10,
        }
    }
}

impl LogMelConfig {
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.window_ms * f64::from(sample_rate) / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (self.hop_ms * f64::from(sample_rate) / 1000.0).round() as usize
    }

    pub fn fft_len(&self, sample_rate: u32) -> usize {
        self.window_len(sample_rate).next_power_of_two()
    }

    pub fn f_max(&self, sample_rate: u32) -> f64 {
        self.f_max.unwrap_or(f64::from(sample_rate) / 2.0)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `n_mels` triangular filters.
pub fn mel_centers(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let lo = hz_to_mel(f_min);
    let hi = hz_to_mel(f_max);
    let step = (hi - lo) / (n_mels + 1) as f64;
    (1..=n_mels).map(|i| mel_to_hz(lo + step * i as f64)).collect()
}

/// Triangular HTK-style filters with unit peak, `n_mels x (n_fft / 2 + 1)`.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let lo = hz_to_mel(f_min);
    let hi = hz_to_mel(f_max);
    let step = (hi - lo) / (n_mels + 1) as f64;
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bin_hz = f64::from(sample_rate) / n_fft as f64;
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, b]] = w;
        }
    }
    fb
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn extract_logmel(w: &Waveform, cfg: &LogMelConfig) -> Result<FeatureMatrix> {
    if !matches!(w.sample_rate, 8000 | 16000) {
        return Err(Error::invalid(format!(
            "unsupported sample rate {} (expected 8000 or 16000)",
            w.sample_rate
        )));
    }
    let win = cfg.window_len(w.sample_rate);
    let hop = cfg.hop_len(w.sample_rate);
    if hop == 0 || win < hop {
        return Err(Error::invalid(format!(
            "window ({win}) must be at least the hop ({hop}) and the hop non-zero"
        )));
    }
    if w.samples.len() < win {
        return Err(Error::invalid(format!(
            "waveform has {} samples, shorter than one {win}-sample window",
            w.samples.len()
        )));
    }
    let n_fft = cfg.fft_len(w.sample_rate);
    let n_bins = n_fft / 2 + 1;
    let fb = mel_filterbank(cfg.n_mels, n_fft, w.sample_rate, cfg.f_min, cfg.f_max(w.sample_rate));
    let window = hann_window(win);
    let n_frames = (w.samples.len() - win) / hop + 1;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = Array1::<f64>::zeros(n_bins);
    let mut out = Array2::<f32>::zeros((n_frames, cfg.n_mels));
    for t in 0..n_frames {
        let frame = &w.samples[t * hop..t * hop + win];
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < win {
                Complex::new(frame[i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (b, p) in power.iter_mut().enumerate() {
            *p = buf[b].norm_sqr();
        }
        let mel = fb.dot(&power);
        for (m, e) in mel.iter().enumerate() {
            out[[t, m]] = (e + cfg.log_floor).ln() as f32;
        }
    }
    Ok(FeatureMatrix {
        frames: out,
        frame_shift_ms: cfg.hop_ms.round() as u32,
        origin: FeatureOrigin::Extracted,
    })
}

/// Concatenates groups of three consecutive frames; a trailing partial group
/// is completed by repeating the last input frame.
pub fn stack_downsample(f: &FeatureMatrix) -> Result<StackedFeatures> {
    let frames = stack_frames(f.frames.view(), STACK_FACTOR)?;
    Ok(StackedFeatures {
        frames,
        base_dim: f.frames.ncols(),
        factor: STACK_FACTOR,
    })
}

pub fn stack_frames(x: ArrayView2<'_, f32>, factor: usize) -> Result<Array2<f32>> {
    let (t_in, d) = x.dim();
    if t_in == 0 {
        return Err(Error::invalid("cannot stack an empty feature matrix"));
    }
    if factor == 0 {
        return Err(Error::invalid("stack factor must be positive"));
    }
    let t_out = t_in.div_ceil(factor);
    let mut out = Array2::zeros((t_out, d * factor));
    for t in 0..t_out {
        for j in 0..factor {
            let src = (t * factor + j).min(t_in - 1);
            out.slice_mut(s![t, j * d..(j + 1) * d]).assign(&x.row(src));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub n_freq_masks: usize,
    pub max_freq_width: usize,
    pub time_mask_max_width: usize,
    pub time_mask_rate: f64,
    pub max_total_time_masked_fraction: f64,
    pub rng_seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            n_freq_masks: 2,
            max_freq_width: 24,
            time_mask_max_width: 25,
            time_mask_rate: 0.004,
            max_total_time_masked_fraction: 0.2,
            rng_seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            n_freq_masks: 0,
            time_mask_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..self.clone()
        }
    }

    /// Zero rate disables time masking; otherwise at least one mask.
    pub fn time_mask_count(&self, t: usize) -> usize {
        if self.time_mask_rate <= 0.0 || t < 2 {
            0
        } else {
            ((t as f64 * self.time_mask_rate).round() as usize).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_total_time_masked_fraction) {
            return Err(Error::invalid("max_total_time_masked_fraction must lie in [0, 1]"));
        }
        if self.time_mask_rate < 0.0 || !self.time_mask_rate.is_finite() {
            return Err(Error::invalid("time_mask_rate must be a finite non-negative number"));
        }
        if self.time_mask_rate > 0.0 && self.time_mask_max_width == 0 {
            return Err(Error::invalid("time_mask_max_width must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentStats {
    pub time_masks: usize,
    pub masked_frames: usize,
    /// Masked base-bin ranges `[start, end)`.
    pub freq_bands: Vec<(usize, usize)>,
}

pub fn spec_augment(f: &StackedFeatures, p: &AugmentPolicy) -> Result<StackedFeatures> {
    spec_augment_with_stats(f, p).map(|(out, _)| out)
}

/// Masked cells take the per-utterance mean of their column.
pub fn spec_augment_with_stats(
    f: &StackedFeatures,
    p: &AugmentPolicy,
) -> Result<(StackedFeatures, AugmentStats)> {
    p.validate()?;
    if f.frames.ncols() != f.base_dim * f.factor {
        return Err(Error::DimensionMismatch {
            what: "stacked feature width",
            expected: f.base_dim * f.factor,
            actual: f.frames.ncols(),
        });
    }
    let t = f.frames.nrows();
    let mut out = f.clone();
    let mut stats = AugmentStats::default();
    if t == 0 {
        return Ok((out, stats));
    }
    let mean = f
        .frames
        .mean_axis(Axis(0))
        .expect("non-empty feature matrix");
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);

    for _ in 0..p.n_freq_masks {
        let max_w = p.max_freq_width.min(f.base_dim);
        if max_w == 0 {
            break;
        }
        let width = rng.random_range(0..=max_w);
        let start = rng.random_range(0..=f.base_dim - width);
        if width == 0 {
            continue;
        }
        stats.freq_bands.push((start, start + width));
        for copy in 0..f.factor {
            for d in start..start + width {
                let col = copy * f.base_dim + d;
                out.frames.column_mut(col).fill(mean[col]);
            }
        }
    }

    let n_masks = p.time_mask_count(t);
    let cap = (p.max_total_time_masked_fraction * t as f64).floor() as usize;
    let mut masked = vec![false; t];
    for _ in 0..n_masks {
        let width = rng.random_range(1..=p.time_mask_max_width.min(t));
        let start = rng.random_range(0..=t - width);
        stats.time_masks += 1;
        for (i, m) in masked.iter_mut().enumerate().skip(start).take(width) {
            if stats.masked_frames >= cap {
                break;
            }
            if !*m {
                *m = true;
                stats.masked_frames += 1;
                out.frames.row_mut(i).assign(&mean);
            }
        }
    }
    Ok((out, stats))
}
