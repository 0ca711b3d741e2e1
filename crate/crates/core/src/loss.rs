//! Transducer negative log-likelihood over the `T x (U + 1)` alignment
//! lattice, computed in log space, with its exact gradient w.r.t. the joint
//! logits and a path-enumeration oracle.

use ndarray::{Array2, Array3, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::BLANK;

/// Largest `T + U` accepted by [`rnnt_loss_bruteforce`].
pub const BRUTEFORCE_LIMIT: usize = 12;

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(f64::NEG_INFINITY, log_add_exp)
}

/// Log-softmax over the vocabulary axis.
pub fn log_softmax(logits: ArrayView3<'_, f64>) -> Array3<f64> {
    let mut out = logits.to_owned();
    for mut row in out.lanes_mut(Axis(2)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransducerLattice {
    /// `alpha[t, u]`: log-probability of having emitted `u` labels by frame `t`
    /// (before the emission at `t`).
    pub alpha: Array2<f64>,
    /// `beta[t, u]`: log-probability of completing the labels from `(t, u)`.
    pub beta: Array2<f64>,
    pub log_probs: Array3<f64>,
}

impl TransducerLattice {
    pub fn log_likelihood(&self) -> f64 {
        let (t_len, u1) = self.alpha.dim();
        self.alpha[[t_len - 1, u1 - 1]] + self.log_probs[[t_len - 1, u1 - 1, BLANK as usize]]
    }

    pub fn log_likelihood_backward(&self) -> f64 {
        self.beta[[0, 0]]
    }

    /// `logsumexp(alpha + beta)` over the cells with `t + u == n`.
    pub fn anti_diagonal(&self, n: usize) -> f64 {
        let (t_len, u1) = self.alpha.dim();
        log_sum_exp(
            (0..u1)
                .filter(|&u| u <= n && n - u < t_len)
                .map(|u| self.alpha[[n - u, u]] + self.beta[[n - u, u]]),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    /// Negative log-likelihood in nats.
    pub loss: f64,
    /// Gradient of `loss` w.r.t. the logits, shaped like them.
    pub dlogits: Array3<f64>,
}

fn check_instance(logits: ArrayView3<'_, f64>, labels: &[u32]) -> Result<()> {
    let (t_len, u1, v) = logits.dim();
    if t_len == 0 {
        return Err(Error::invalid("transducer loss needs at least one frame"));
    }
    if u1 != labels.len() + 1 {
        return Err(Error::DimensionMismatch {
            what: "logit label axis (U + 1)",
            expected: labels.len() + 1,
            actual: u1,
        });
    }
    if v < 2 {
        return Err(Error::invalid("vocabulary must contain blank and at least one label"));
    }
    for (position, &label) in labels.iter().enumerate() {
        if label == BLANK || label as usize >= v {
            return Err(Error::InvalidLabel {
                label,
                position,
                max: (v - 1) as u32,
            });
        }
    }
    Ok(())
}

/// Forward and backward recursions. Blank id is 0; the path ends with a
/// blank emitted at the last frame.
pub fn lattice(logits: ArrayView3<'_, f64>, labels: &[u32]) -> Result<TransducerLattice> {
    check_instance(logits, labels)?;
    let (t_len, u1, _) = logits.dim();
    let lp = log_softmax(logits);
    let blank = BLANK as usize;
    let emit = |t: usize, u: usize| lp[[t, u, labels[u] as usize]];

    let mut alpha = Array2::from_elem((t_len, u1), f64::NEG_INFINITY);
    alpha[[0, 0]] = 0.0;
    for t in 0..t_len {
        for u in 0..u1 {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha[[t - 1, u]] + lp[[t - 1, u, blank]]
            } else {
                f64::NEG_INFINITY
            };
            let from_label = if u > 0 {
                alpha[[t, u - 1]] + emit(t, u - 1)
            } else {
                f64::NEG_INFINITY
            };
            alpha[[t, u]] = log_add_exp(from_blank, from_label);
        }
    }

    let mut beta = Array2::from_elem((t_len, u1), f64::NEG_INFINITY);
    beta[[t_len - 1, u1 - 1]] = lp[[t_len - 1, u1 - 1, blank]];
    for t in (0..t_len).rev() {
        for u in (0..u1).rev() {
            if t == t_len - 1 && u == u1 - 1 {
                continue;
            }
            let via_blank = if t + 1 < t_len {
                beta[[t + 1, u]] + lp[[t, u, blank]]
            } else {
                f64::NEG_INFINITY
            };
            let via_label = if u + 1 < u1 {
                beta[[t, u + 1]] + emit(t, u)
            } else {
                f64::NEG_INFINITY
            };
            beta[[t, u]] = log_add_exp(via_blank, via_label);
        }
    }
    Ok(TransducerLattice {
        alpha,
        beta,
        log_probs: lp,
    })
}

pub fn rnnt_loss(logits: ArrayView3<'_, f64>, labels: &[u32]) -> Result<LossResult> {
    let lat = lattice(logits, labels)?;
    let (t_len, u1, v) = logits.dim();
    let ll = lat.log_likelihood();
    let blank = BLANK as usize;
    let lp = &lat.log_probs;
    let mut d = Array3::<f64>::zeros((t_len, u1, v));
    if ll == f64::NEG_INFINITY {
        return Ok(LossResult {
            loss: f64::INFINITY,
            dlogits: d,
        });
    }
    for t in 0..t_len {
        for u in 0..u1 {
            let a = lat.alpha[[t, u]];
            let occupancy = (a + lat.beta[[t, u]] - ll).exp();
            // d(-ll)/d(logp) for the two outgoing transitions
            let g_blank = if t + 1 < t_len {
                -(a + lp[[t, u, blank]] + lat.beta[[t + 1, u]] - ll).exp()
            } else if u + 1 == u1 {
                -(a + lp[[t, u, blank]] - ll).exp()
            } else {
                0.0
            };
            let (label, g_label) = if u + 1 < u1 {
                let k = labels[u] as usize;
                (k, -(a + lp[[t, u, k]] + lat.beta[[t, u + 1]] - ll).exp())
            } else {
                (usize::MAX, 0.0)
            };
            for k in 0..v {
                let mut g = lp[[t, u, k]].exp() * occupancy;
                if k == blank {
                    g += g_blank;
                }
                if k == label {
                    g += g_label;
                }
                d[[t, u, k]] = g;
            }
        }
    }
    Ok(LossResult {
        loss: (-ll).max(0.0),
        dlogits: d,
    })
}

/// Sums the probability of every alignment path explicitly.
pub fn rnnt_loss_bruteforce(logits: ArrayView3<'_, f64>, labels: &[u32]) -> Result<f64> {
    check_instance(logits, labels)?;
    let (t_len, u1, v) = logits.dim();
    let size = t_len + labels.len();
    if size > BRUTEFORCE_LIMIT {
        return Err(Error::TooLarge {
            size,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    // Probability-domain softmax per cell, then log of each entry.
    let mut logp = vec![0.0; t_len * u1 * v];
    for t in 0..t_len {
        for u in 0..u1 {
            let row: Vec<f64> = (0..v).map(|k| logits[[t, u, k]]).collect();
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for k in 0..v {
                logp[(t * u1 + u) * v + k] = (row[k] - m) - z.ln();
            }
        }
    }
    let mut paths = Vec::new();
    walk(0, 0, 0.0, t_len, labels, &logp, u1, v, &mut paths);
    Ok(-log_sum_exp(paths))
}

#[allow(clippy::too_many_arguments)]
fn walk(t: usize, u: usize, acc: f64, t_len: usize, labels: &[u32], logp: &[f64], u1: usize, v: usize, out: &mut Vec<f64>) {
    let at = |k: usize| logp[(t * u1 + u) * v + k];
    if u < labels.len() {
        walk(t, u + 1, acc + at(labels[u] as usize), t_len, labels, logp, u1, v, out);
    }
    if t + 1 < t_len {
        walk(t + 1, u, acc + at(0), t_len, labels, logp, u1, v, out);
    } else if u == labels.len() {
        out.push(acc + at(0));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub frames: usize,
    pub labels: usize,
    pub vocab: usize,
    /// Logits are drawn uniformly from `[-scale, scale]`; zero gives the
    /// all-zero instance.
    pub logit_scale: f64,
    pub epsilon: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            frames: 4,
            labels: 3,
            vocab: 4,
            logit_scale: 2.0,
            epsilon: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub max_row_sum: f64,
    pub passed: bool,
}

/// Central finite differences of [`rnnt_loss`] against its analytic gradient
/// on a seeded random instance.
pub fn loss_grad_check(config: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u32> = (0..config.labels)
        .map(|_| rng.random_range(1..config.vocab as u32))
        .collect();
    let s = config.logit_scale;
    let logits = Array3::from_shape_fn((config.frames, config.labels + 1, config.vocab), |_| {
        if s > 0.0 {
            rng.random_range(-s..s)
        } else {
            0.0
        }
    });
    let res = rnnt_loss(logits.view(), &labels)?;
    let mut max_rel: f64 = 0.0;
    for idx in ndarray::indices(logits.dim()) {
        let mut plus = logits.clone();
        plus[idx] += config.epsilon;
        let mut minus = logits.clone();
        minus[idx] -= config.epsilon;
        let fd = (rnnt_loss(plus.view(), &labels)?.loss - rnnt_loss(minus.view(), &labels)?.loss)
            / (2.0 * config.epsilon);
        let an = res.dlogits[idx];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    let max_row_sum = res
        .dlogits
        .lanes(Axis(2))
        .into_iter()
        .map(|r| r.sum().abs())
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        checked: logits.len(),
        max_relative_error: max_rel,
        max_row_sum,
        passed: max_rel < 1e-6 && max_row_sum < 1e-10,
    })
}
