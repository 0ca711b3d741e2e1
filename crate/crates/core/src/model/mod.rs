//! Transducer network: LSTM encoder, LSTM prediction network and a
//! feed-forward joint network.

mod checkpoint;
mod joint;
mod lstm;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint};
pub use joint::{joint, JointLogits};
pub(crate) use joint::{joint_backward, joint_forward, joint_single, project_encoder, project_prediction};
pub use lstm::{LstmCache, LstmLayer, LstmState};

pub const BLANK: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_layers: usize,
    pub encoder_units: usize,
    pub prediction_layers: usize,
    pub prediction_units: usize,
    pub joint_units: usize,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 12,
            encoder_layers: 2,
            encoder_units: 64,
            prediction_layers: 1,
            prediction_units: 64,
            joint_units: 64,
            vocab_size: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_units", self.encoder_units),
            ("prediction_layers", self.prediction_layers),
            ("prediction_units", self.prediction_units),
            ("joint_units", self.joint_units),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("model.{name} must be at least 1")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::invalid("model.vocab_size must be at least 2 (blank + one label)"));
        }
        Ok(())
    }

    pub fn max_label(&self) -> u32 {
        (self.vocab_size - 1) as u32
    }

    pub fn check_labels(&self, labels: &[u32]) -> Result<()> {
        for (position, &label) in labels.iter().enumerate() {
            if label == BLANK || label > self.max_label() {
                return Err(Error::InvalidLabel {
                    label,
                    position,
                    max: self.max_label(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionParams {
    /// `V x P`; row 0 (blank) is the start-of-sequence input.
    pub embed: Array2<f64>,
    pub layers: Vec<LstmLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    /// `J x (E + P)`, applied to the concatenation `[h_t ; g_u]`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// `V x J`
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
}

/// All trainable tensors. The same type carries gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: Vec<LstmLayer>,
    pub prediction: PredictionParams,
    pub joint: JointParams,
}

/// Borrowed view of one named tensor, row-major.
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config;
        let mut encoder = Vec::with_capacity(c.encoder_layers);
        for l in 0..c.encoder_layers {
            let input = if l == 0 { c.input_dim } else { c.encoder_units };
            encoder.push(LstmLayer::zeros(input, c.encoder_units));
        }
        let layers = (0..c.prediction_layers)
            .map(|_| LstmLayer::zeros(c.prediction_units, c.prediction_units))
            .collect();
        Self {
            config: c.clone(),
            encoder,
            prediction: PredictionParams {
                embed: Array2::zeros((c.vocab_size, c.prediction_units)),
                layers,
            },
            joint: JointParams {
                weight: Array2::zeros((c.joint_units, c.encoder_units + c.prediction_units)),
                bias: Array1::zeros(c.joint_units),
                out_weight: Array2::zeros((c.vocab_size, c.joint_units)),
                out_bias: Array1::zeros(c.vocab_size),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Tensors in canonical order with their checkpoint names.
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.iter().enumerate() {
            out.push(mat_tensor(format!("encoder.{l}.w_ih"), &layer.w_ih));
            out.push(mat_tensor(format!("encoder.{l}.w_hh"), &layer.w_hh));
            out.push(vec_tensor(format!("encoder.{l}.bias"), &layer.bias));
        }
        out.push(mat_tensor("prediction.embed".into(), &self.prediction.embed));
        for (l, layer) in self.prediction.layers.iter().enumerate() {
            out.push(mat_tensor(format!("prediction.{l}.w_ih"), &layer.w_ih));
            out.push(mat_tensor(format!("prediction.{l}.w_hh"), &layer.w_hh));
            out.push(vec_tensor(format!("prediction.{l}.bias"), &layer.bias));
        }
        out.push(mat_tensor("joint.weight".into(), &self.joint.weight));
        out.push(vec_tensor("joint.bias".into(), &self.joint.bias));
        out.push(mat_tensor("output.weight".into(), &self.joint.out_weight));
        out.push(vec_tensor("output.bias".into(), &self.joint.out_bias));
        out
    }

    /// Mutable slices in the same canonical order as [`ModelParams::tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.encoder {
            out.push(layer.w_ih.as_slice_mut().expect("standard layout"));
            out.push(layer.w_hh.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.prediction.embed.as_slice_mut().expect("standard layout"));
        for layer in &mut self.prediction.layers {
            out.push(layer.w_ih.as_slice_mut().expect("standard layout"));
            out.push(layer.w_hh.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.joint.weight.as_slice_mut().expect("standard layout"));
        out.push(self.joint.bias.as_slice_mut().expect("standard layout"));
        out.push(self.joint.out_weight.as_slice_mut().expect("standard layout"));
        out.push(self.joint.out_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|t| t.name).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Flat copy of every parameter in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rounds every entry to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        }
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        for t in self.tensors() {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(t.name);
            }
        }
        Ok(())
    }
}

fn mat_tensor(name: String, a: &Array2<f64>) -> NamedTensor<'_> {
    NamedTensor {
        name,
        shape: a.dim(),
        data: a.as_slice().expect("standard layout"),
    }
}

fn vec_tensor(name: String, a: &Array1<f64>) -> NamedTensor<'_> {
    NamedTensor {
        name,
        shape: (1, a.len()),
        data: a.as_slice().expect("standard layout"),
    }
}

/// Uniform in `[-k, k]` with `k = 1 / sqrt(fan_in)`, forget-gate biases 1.0.
///
/// Fan-in: LSTM input weights use the input width, recurrent weights and
/// biases the hidden width, embeddings 1 (a lookup), joint and output layers
/// their input width. Values are rounded to `f32`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut p = ModelParams::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fill = |a: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng| {
        let k = 1.0 / (fan_in as f64).sqrt();
        for v in a.iter_mut() {
            *v = f64::from(rng.random_range(-k..=k) as f32);
        }
    };
    let e = config.encoder_units;
    let pu = config.prediction_units;
    for layer in p.encoder.iter_mut() {
        let input = layer.input();
        fill(layer.w_ih.as_slice_mut().unwrap(), input, &mut rng);
        fill(layer.w_hh.as_slice_mut().unwrap(), e, &mut rng);
        fill(layer.bias.as_slice_mut().unwrap(), e, &mut rng);
        layer.bias.slice_mut(ndarray::s![e..2 * e]).fill(1.0);
    }
    fill(p.prediction.embed.as_slice_mut().unwrap(), 1, &mut rng);
    for layer in p.prediction.layers.iter_mut() {
        fill(layer.w_ih.as_slice_mut().unwrap(), pu, &mut rng);
        fill(layer.w_hh.as_slice_mut().unwrap(), pu, &mut rng);
        fill(layer.bias.as_slice_mut().unwrap(), pu, &mut rng);
        layer.bias.slice_mut(ndarray::s![pu..2 * pu]).fill(1.0);
    }
    fill(p.joint.weight.as_slice_mut().unwrap(), e + pu, &mut rng);
    fill(p.joint.bias.as_slice_mut().unwrap(), e + pu, &mut rng);
    let j = config.joint_units;
    fill(p.joint.out_weight.as_slice_mut().unwrap(), j, &mut rng);
    fill(p.joint.out_bias.as_slice_mut().unwrap(), j, &mut rng);
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `T x encoder_units`
    pub h: Array2<f64>,
    /// Final state per layer.
    pub states: Vec<LstmState>,
}

pub(crate) fn encoder_forward(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Vec<LstmCache>)> {
    if x.ncols() != params.config.input_dim {
        return Err(Error::DimensionMismatch {
            what: "encoder input",
            expected: params.config.input_dim,
            actual: x.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("encoder input has no frames"));
    }
    let caches = lstm::stack_forward(&params.encoder, x);
    let h = caches.last().expect("at least one layer").output().clone();
    Ok((h, caches))
}

pub(crate) fn encoder_backward(
    params: &ModelParams,
    caches: &[LstmCache],
    dh: ArrayView2<'_, f64>,
    grads: &mut ModelParams,
) -> Array2<f64> {
    lstm::stack_backward(&params.encoder, caches, dh, &mut grads.encoder)
}

/// Runs the encoder over every frame of `x` from a zero state.
pub fn encode(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<EncoderOutput> {
    let (h, caches) = encoder_forward(params, x)?;
    let states = caches
        .iter()
        .map(|c| c.final_state().expect("non-empty input"))
        .collect();
    Ok(EncoderOutput { h, states })
}

fn prediction_inputs(params: &ModelParams, labels: &[u32]) -> Array2<f64> {
    let pu = params.config.prediction_units;
    let mut x = Array2::zeros((labels.len() + 1, pu));
    x.row_mut(0).assign(&params.prediction.embed.row(BLANK as usize));
    for (j, &y) in labels.iter().enumerate() {
        x.row_mut(j + 1).assign(&params.prediction.embed.row(y as usize));
    }
    x
}

pub(crate) fn prediction_forward(params: &ModelParams, labels: &[u32]) -> Result<(Array2<f64>, Vec<LstmCache>)> {
    params.config.check_labels(labels)?;
    let x = prediction_inputs(params, labels);
    let caches = lstm::stack_forward(&params.prediction.layers, x.view());
    let g = caches.last().expect("at least one layer").output().clone();
    Ok((g, caches))
}

pub(crate) fn prediction_backward(
    params: &ModelParams,
    labels: &[u32],
    caches: &[LstmCache],
    dg: ArrayView2<'_, f64>,
    grads: &mut ModelParams,
) {
    let dx = lstm::stack_backward(&params.prediction.layers, caches, dg, &mut grads.prediction.layers);
    let mut embed = grads.prediction.embed.row_mut(BLANK as usize);
    embed += &dx.row(0);
    for (j, &y) in labels.iter().enumerate() {
        let mut row = grads.prediction.embed.row_mut(y as usize);
        row += &dx.row(j + 1);
    }
}

/// Prediction-network outputs: row 0 for the empty history, row `j` after
/// consuming `labels[..j]`.
pub fn predict_labels(params: &ModelParams, labels: &[u32]) -> Result<Array2<f64>> {
    prediction_forward(params, labels).map(|(g, _)| g)
}

/// Incremental prediction-network state for decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionState {
    pub layers: Vec<LstmState>,
    /// Output of the top layer.
    pub output: Array1<f64>,
}

impl PredictionState {
    pub fn start(params: &ModelParams) -> Self {
        let pu = params.config.prediction_units;
        let zeros: Vec<LstmState> = (0..params.prediction.layers.len())
            .map(|_| LstmState::zeros(pu))
            .collect();
        Self::feed(params, &zeros, BLANK)
    }

    pub fn advance(&self, params: &ModelParams, label: u32) -> Self {
        Self::feed(params, &self.layers, label)
    }

    fn feed(params: &ModelParams, states: &[LstmState], token: u32) -> Self {
        let x = params.prediction.embed.row(token as usize);
        let layers = lstm::stack_step(&params.prediction.layers, x, states);
        let output = layers.last().expect("at least one layer").h.clone();
        Self { layers, output }
    }
}
