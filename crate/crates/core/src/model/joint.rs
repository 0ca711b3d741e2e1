//! Feed-forward joint network over concatenated encoder / prediction rows.
//!
//! `z[t, u, :] = W_out tanh(W_j [h_t ; g_u] + b_j) + b_out`. The product with
//! `W_j` is split column-wise so each encoder row and each prediction row is
//! projected once instead of once per lattice cell.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::lstm::standard;
use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct JointLogits {
    /// `T x (U + 1) x V`, pre-softmax.
    pub z: Array3<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct JointCache {
    h: Array2<f64>,
    g: Array2<f64>,
    /// Hidden activations, one row per lattice cell `t * (U + 1) + u`.
    act: Array2<f64>,
}

fn check_shapes(params: &ModelParams, h: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>) -> Result<()> {
    let cfg = &params.config;
    if h.ncols() != cfg.encoder_units {
        return Err(Error::DimensionMismatch {
            what: "joint encoder rows",
            expected: cfg.encoder_units,
            actual: h.ncols(),
        });
    }
    if g.ncols() != cfg.prediction_units {
        return Err(Error::DimensionMismatch {
            what: "joint prediction rows",
            expected: cfg.prediction_units,
            actual: g.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn joint_forward(
    params: &ModelParams,
    h: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
) -> Result<(JointLogits, JointCache)> {
    check_shapes(params, h, g)?;
    let e = params.config.encoder_units;
    let (t_len, u1) = (h.nrows(), g.nrows());
    let jn = &params.joint;
    let enc_proj = h.dot(&jn.weight.slice(s![.., ..e]).t());
    let mut pred_proj = g.dot(&jn.weight.slice(s![.., e..]).t());
    pred_proj += &jn.bias;
    let j = jn.bias.len();
    let mut act = Array2::<f64>::zeros((t_len * u1, j));
    for t in 0..t_len {
        for u in 0..u1 {
            let mut row = act.row_mut(t * u1 + u);
            let (ep, pp) = (enc_proj.row(t), pred_proj.row(u));
            for k in 0..j {
                row[k] = (ep[k] + pp[k]).tanh();
            }
        }
    }
    let mut z = standard(act.dot(&jn.out_weight.t()));
    z += &jn.out_bias;
    let v = z.ncols();
    let z = z
        .into_shape_with_order((t_len, u1, v))
        .expect("row-major logits");
    Ok((
        JointLogits { z },
        JointCache {
            h: h.to_owned(),
            g: g.to_owned(),
            act,
        },
    ))
}

/// Returns `(dh, dg)` and accumulates joint parameter gradients.
pub(crate) fn joint_backward(
    params: &ModelParams,
    cache: &JointCache,
    dz: ArrayView3<'_, f64>,
    grads: &mut ModelParams,
) -> (Array2<f64>, Array2<f64>) {
    let e = params.config.encoder_units;
    let (t_len, u1, v) = dz.dim();
    let dz = dz
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((t_len * u1, v))
        .expect("row-major logits");
    let jn = &params.joint;
    let gj = &mut grads.joint;
    gj.out_weight += &dz.t().dot(&cache.act);
    gj.out_bias += &dz.sum_axis(Axis(0));
    let mut dpre = dz.dot(&jn.out_weight);
    dpre.zip_mut_with(&cache.act, |d, &a| *d *= 1.0 - a * a);

    let j = dpre.ncols();
    let mut d_enc = Array2::<f64>::zeros((t_len, j));
    let mut d_pred = Array2::<f64>::zeros((u1, j));
    for t in 0..t_len {
        for u in 0..u1 {
            let row = dpre.row(t * u1 + u);
            d_enc.row_mut(t).scaled_add(1.0, &row);
            d_pred.row_mut(u).scaled_add(1.0, &row);
        }
    }
    {
        let mut w_enc = gj.weight.slice_mut(s![.., ..e]);
        w_enc += &d_enc.t().dot(&cache.h);
    }
    {
        let mut w_pred = gj.weight.slice_mut(s![.., e..]);
        w_pred += &d_pred.t().dot(&cache.g);
    }
    gj.bias += &d_pred.sum_axis(Axis(0));
    let dh = d_enc.dot(&jn.weight.slice(s![.., ..e]));
    let dg = d_pred.dot(&jn.weight.slice(s![.., e..]));
    (dh, dg)
}

/// Logits for one encoder frame against one prediction output, used by the
/// decoders.
pub(crate) fn joint_single(params: &ModelParams, enc_proj: &[f64], pred_proj: &[f64]) -> Vec<f64> {
    let jn = &params.joint;
    let j = jn.bias.len();
    let act: Vec<f64> = (0..j).map(|k| (enc_proj[k] + pred_proj[k]).tanh()).collect();
    jn.out_weight
        .rows()
        .into_iter()
        .zip(jn.out_bias.iter())
        .map(|(w, b)| b + w.iter().zip(&act).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

pub(crate) fn project_encoder(params: &ModelParams, h: ArrayView2<'_, f64>) -> Array2<f64> {
    let e = params.config.encoder_units;
    h.dot(&params.joint.weight.slice(s![.., ..e]).t())
}

pub(crate) fn project_prediction(params: &ModelParams, g: ndarray::ArrayView1<'_, f64>) -> Vec<f64> {
    let e = params.config.encoder_units;
    let p = params.joint.weight.slice(s![.., e..]).dot(&g) + &params.joint.bias;
    p.to_vec()
}

/// Evaluates the joint network for every `(t, u)` pair of `h` and `g`.
pub fn joint(params: &ModelParams, h_rows: ArrayView2<'_, f64>, g_rows: ArrayView2<'_, f64>) -> Result<JointLogits> {
    joint_forward(params, h_rows, g_rows).map(|(z, _)| z)
}
