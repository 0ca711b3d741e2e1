#![allow(dead_code)]

use ctxrnnt::dataset::{Condition, SegmentRecord, UtteranceRecord};
use ctxrnnt::features::StackedFeatures;
use ctxrnnt::model::{init_params, ModelConfig, ModelParams};
use ctxrnnt::training::{utterance_loss_value, TrainMode};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn config(encoder_layers: usize, encoder_units: usize, input_dim: usize) -> ModelConfig {
    ModelConfig {
        input_dim,
        encoder_layers,
        encoder_units,
        prediction_layers: 1,
        prediction_units: 4,
        joint_units: 5,
        vocab_size: 4,
    }
}

pub fn params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = init_params(cfg, seed).unwrap();
    // Larger weights than the default init keep the loss surface away from
    // the near-linear regime.
    p.scale(2.0);
    p
}

pub fn inputs(t: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0..1.0))
}

pub fn record(x: &Array2<f64>, segments: Vec<SegmentRecord>) -> UtteranceRecord {
    UtteranceRecord {
        id: "u".into(),
        features: StackedFeatures::unstacked(x.mapv(|v| v as f32)),
        segments,
        conditions: [Condition::Clean].into(),
        audio: None,
    }
}

/// Relative error with the denominator floored at `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of the objective along parameter `flat_index`.
pub fn fd_param(
    p: &ModelParams,
    x: &Array2<f64>,
    segs: &[SegmentRecord],
    mode: TrainMode,
    flat_index: usize,
    eps: f64,
) -> f64 {
    let eval = |delta: f64| {
        let mut q = p.clone();
        let mut k = flat_index;
        for s in q.slices_mut() {
            if k < s.len() {
                s[k] += delta;
                break;
            }
            k -= s.len();
        }
        utterance_loss_value(&q, "u", x.view(), segs, mode).unwrap()
    };
    (eval(eps) - eval(-eps)) / (2.0 * eps)
}

/// Central difference of the objective along input element `(t, d)`.
pub fn fd_input(
    p: &ModelParams,
    x: &Array2<f64>,
    segs: &[SegmentRecord],
    mode: TrainMode,
    t: usize,
    d: usize,
    eps: f64,
) -> f64 {
    let eval = |delta: f64| {
        let mut y = x.clone();
        y[[t, d]] += delta;
        utterance_loss_value(p, "u", y.view(), segs, mode).unwrap()
    };
    (eval(eps) - eval(-eps)) / (2.0 * eps)
}
