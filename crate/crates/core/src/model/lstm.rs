//! Unidirectional LSTM layer with full-sequence backpropagation.
//!
//! Gate rows are stacked `[input, forget, cell, output]`, each `hidden` wide.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4H x In`
    pub w_ih: Array2<f64>,
    /// `4H x H`
    pub w_hh: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

/// Everything the backward pass needs from one forward sweep.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array2<f64>,
    /// Post-activation gates, `T x 4H`.
    gates: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    h: Array2<f64>,
}

impl LstmCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.h
    }

    pub fn final_state(&self) -> Option<LstmState> {
        let t = self.h.nrows();
        (t > 0).then(|| LstmState {
            h: self.h.row(t - 1).to_owned(),
            c: self.c.row(t - 1).to_owned(),
        })
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.ncols()
    }

    fn activate(&self, pre: &mut [f64], c_prev: ArrayView1<'_, f64>, c: &mut [f64], tanh_c: &mut [f64], h: &mut [f64]) {
        let hd = self.hidden();
        for k in 0..hd {
            let i = sigmoid(pre[k]);
            let f = sigmoid(pre[hd + k]);
            let g = pre[2 * hd + k].tanh();
            let o = sigmoid(pre[3 * hd + k]);
            pre[k] = i;
            pre[hd + k] = f;
            pre[2 * hd + k] = g;
            pre[3 * hd + k] = o;
            c[k] = f * c_prev[k] + i * g;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
    }

    /// Runs the layer over `x` (`T x In`) from a zero state.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> LstmCache {
        let t_len = x.nrows();
        let hd = self.hidden();
        let mut gates = standard(x.dot(&self.w_ih.t()));
        gates += &self.bias;
        let mut c = Array2::zeros((t_len, hd));
        let mut tanh_c = Array2::zeros((t_len, hd));
        let mut h = Array2::zeros((t_len, hd));
        let zero = Array1::zeros(hd);
        for t in 0..t_len {
            if t > 0 {
                let rec = self.w_hh.dot(&h.row(t - 1));
                gates.row_mut(t).scaled_add(1.0, &rec);
            }
            let c_prev = if t > 0 { c.row(t - 1).to_owned() } else { zero.clone() };
            let mut g_row = gates.row_mut(t);
            let mut c_row = c.row_mut(t);
            let mut tc_row = tanh_c.row_mut(t);
            let mut h_row = h.row_mut(t);
            self.activate(
                g_row.as_slice_mut().expect("contiguous"),
                c_prev.view(),
                c_row.as_slice_mut().expect("contiguous"),
                tc_row.as_slice_mut().expect("contiguous"),
                h_row.as_slice_mut().expect("contiguous"),
            );
        }
        LstmCache {
            x: x.to_owned(),
            gates,
            c,
            tanh_c,
            h,
        }
    }

    /// Single step from an explicit state, used by the decoders.
    pub fn step(&self, x: ArrayView1<'_, f64>, state: &LstmState) -> LstmState {
        let hd = self.hidden();
        let mut pre = self.w_ih.dot(&x) + self.w_hh.dot(&state.h) + &self.bias;
        let mut c = Array1::zeros(hd);
        let mut tanh_c = Array1::zeros(hd);
        let mut h = Array1::zeros(hd);
        self.activate(
            pre.as_slice_mut().expect("contiguous"),
            state.c.view(),
            c.as_slice_mut().expect("contiguous"),
            tanh_c.as_slice_mut().expect("contiguous"),
            h.as_slice_mut().expect("contiguous"),
        );
        LstmState { h, c }
    }

    /// Backpropagates `dh` (`T x H`, gradient w.r.t. each output row) through
    /// time. Accumulates parameter gradients into `grad` and returns the
    /// gradient w.r.t. the layer input.
    pub fn backward(&self, cache: &LstmCache, dh: ArrayView2<'_, f64>, grad: &mut LstmLayer) -> Array2<f64> {
        let t_len = cache.h.nrows();
        let hd = self.hidden();
        let mut dpre = Array2::<f64>::zeros((t_len, 4 * hd));
        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);
        for t in (0..t_len).rev() {
            let gates = cache.gates.row(t);
            let tanh_c = cache.tanh_c.row(t);
            let mut row = dpre.row_mut(t);
            for k in 0..hd {
                let (i, f, g, o) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
                let c_prev = if t > 0 { cache.c[[t - 1, k]] } else { 0.0 };
                let dh_k = dh[[t, k]] + dh_next[k];
                let d_o = dh_k * tanh_c[k];
                let dc = dc_next[k] + dh_k * o * (1.0 - tanh_c[k] * tanh_c[k]);
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * c_prev;
                dc_next[k] = dc * f;
                row[k] = d_i * i * (1.0 - i);
                row[hd + k] = d_f * f * (1.0 - f);
                row[2 * hd + k] = d_g * (1.0 - g * g);
                row[3 * hd + k] = d_o * o * (1.0 - o);
            }
            dh_next = self.w_hh.t().dot(&dpre.row(t));
        }
        grad.w_ih += &dpre.t().dot(&cache.x);
        if t_len > 1 {
            let d_rec = dpre.slice(s![1.., ..]);
            let h_prev = cache.h.slice(s![..t_len - 1, ..]);
            grad.w_hh += &d_rec.t().dot(&h_prev);
        }
        grad.bias += &dpre.sum_axis(Axis(0));
        dpre.dot(&self.w_ih)
    }

    pub fn add_assign(&mut self, other: &LstmLayer) {
        self.w_ih += &other.w_ih;
        self.w_hh += &other.w_hh;
        self.bias += &other.bias;
    }
}

/// A stack of layers evaluated from zero state.
pub fn stack_forward(layers: &[LstmLayer], x: ArrayView2<'_, f64>) -> Vec<LstmCache> {
    let mut caches: Vec<LstmCache> = Vec::with_capacity(layers.len());
    for layer in layers {
        let cache = match caches.last() {
            Some(prev) => layer.forward(prev.h.view()),
            None => layer.forward(x),
        };
        caches.push(cache);
    }
    caches
}

pub fn stack_backward(
    layers: &[LstmLayer],
    caches: &[LstmCache],
    dh: ArrayView2<'_, f64>,
    grads: &mut [LstmLayer],
) -> Array2<f64> {
    let mut d = dh.to_owned();
    for ((layer, cache), grad) in layers.iter().zip(caches).zip(grads.iter_mut()).rev() {
        d = layer.backward(cache, d.view(), grad);
    }
    d
}

pub fn stack_step(layers: &[LstmLayer], x: ArrayView1<'_, f64>, states: &[LstmState]) -> Vec<LstmState> {
    let mut out: Vec<LstmState> = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let next = match out.last() {
            Some(prev) => layer.step(prev.h.view(), &states[l]),
            None => layer.step(x, &states[l]),
        };
        out.push(next);
    }
    out
}

/// Row-major copy if `a` is not already row-major.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}
