//! Single-layer LSTM with a dense readout and hand-written
//! backpropagation through time.
//!
//! Every recurrent model in the crate (motif networks, the four GAN blocks,
//! the forecasting model) is an [`LstmNet`]: gate-stacked LSTM weights
//! followed by a per-step affine head and an optional sigmoid. Gate rows are
//! stacked in the order input, forget, cell candidate, output.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// LSTM parameters plus readout. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmNet {
    /// Input-to-gates weights `[4H x input]`.
    pub w_in: Array2<f64>,
    /// Hidden-to-gates weights `[4H x H]`.
    pub u: Array2<f64>,
    /// Gate biases `[4H]`.
    pub b: Array1<f64>,
    /// Readout `[out x H]`.
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    pub activation: Activation,
}

/// Forward-pass record needed by [`LstmNet::backward`].
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Inputs actually consumed, including any fed-back outputs.
    pub inputs: Array2<f64>,
    gates: Array2<f64>,
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
    pub hidden: Array2<f64>,
    /// Post-activation outputs `[L x out]`.
    pub outputs: Array2<f64>,
}

impl LstmNet {
    pub fn zeros(input: usize, hidden: usize, out: usize, activation: Activation) -> Self {
        Self {
            w_in: Array2::zeros((4 * hidden, input)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
            head_w: Array2::zeros((out, hidden)),
            head_b: Array1::zeros(out),
            activation,
        }
    }

    /// Uniform `(-1/sqrt(H), 1/sqrt(H))` initialisation for every tensor.
    pub fn random<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-k, k).expect("valid bounds");
        let mut net = Self::zeros(input, hidden, out, activation);
        for slice in net.slices_mut() {
            for v in slice.iter_mut() {
                *v = dist.sample(rng);
            }
        }
        net
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.output_dim(), self.activation)
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.head_w.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn slices(&self) -> [&[f64]; 5] {
        [
            self.w_in.as_slice().expect("standard layout"),
            self.u.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
            self.head_w.as_slice().expect("standard layout"),
            self.head_b.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w_in.as_slice_mut().expect("standard layout"),
            self.u.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
            self.head_w.as_slice_mut().expect("standard layout"),
            self.head_b.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Row-major concatenation of all tensors.
    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut off = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Order-sensitive digest of the parameters.
    pub fn checksum(&self) -> u64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0xcbf2_9ce4_8422_2325u64, |h, x| (h ^ x.to_bits()).wrapping_mul(0x0000_0100_0000_01b3))
    }

    /// Runs the network over `inputs` (`[L x input]`) from zero state.
    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<LstmCache> {
        if inputs.ncols() != self.input_dim() {
            return Err(ForgeError::DimensionMismatch(format!(
                "input has {} channels, network expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        self.run(inputs.to_owned(), None)
    }

    /// Autoregressive run: the input at step `t` is `[exog_t ; y_{t-1}]` with
    /// `y_{-1} = 0`.
    pub fn forward_feedback(&self, exog: ArrayView2<f64>) -> Result<LstmCache> {
        let off = exog.ncols();
        if off + self.output_dim() != self.input_dim() {
            return Err(ForgeError::DimensionMismatch(format!(
                "feedback run needs input = exog ({off}) + output ({}), network has {}",
                self.output_dim(),
                self.input_dim()
            )));
        }
        let mut inputs = Array2::zeros((exog.nrows(), self.input_dim()));
        inputs.slice_mut(ndarray::s![.., ..off]).assign(&exog);
        self.run(inputs, Some(off))
    }

    fn run(&self, mut inputs: Array2<f64>, feedback: Option<usize>) -> Result<LstmCache> {
        let len = inputs.nrows();
        let n_in = self.input_dim();
        let hd = self.hidden_dim();
        let od = self.output_dim();
        let mut gates = Array2::zeros((len, 4 * hd));
        let mut cells = Array2::zeros((len, hd));
        let mut tanh_cells = Array2::zeros((len, hd));
        let mut hidden = Array2::zeros((len, hd));
        let mut outputs = Array2::zeros((len, od));

        let w_in = self.w_in.as_slice().expect("standard layout");
        let u = self.u.as_slice().expect("standard layout");
        let b = self.b.as_slice().expect("standard layout");
        let hw = self.head_w.as_slice().expect("standard layout");
        let hb = self.head_b.as_slice().expect("standard layout");

        let mut h_prev = vec![0.0; hd];
        let mut c_prev = vec![0.0; hd];
        let mut pre = vec![0.0; 4 * hd];
        for t in 0..len {
            if let (Some(off), true) = (feedback, t > 0) {
                for k in 0..od {
                    inputs[[t, off + k]] = outputs[[t - 1, k]];
                }
            }
            let x = inputs.row(t);
            let x = x.as_slice().expect("standard layout");
            for (r, p) in pre.iter_mut().enumerate() {
                let wr = &w_in[r * n_in..(r + 1) * n_in];
                let ur = &u[r * hd..(r + 1) * hd];
                *p = b[r] + dot(wr, x) + dot(ur, &h_prev);
            }
            let mut g_row = gates.row_mut(t);
            let mut c_row = cells.row_mut(t);
            let mut tc_row = tanh_cells.row_mut(t);
            let mut h_row = hidden.row_mut(t);
            for k in 0..hd {
                let ig = sigmoid(pre[k]);
                let fg = sigmoid(pre[hd + k]);
                let gg = pre[2 * hd + k].tanh();
                let og = sigmoid(pre[3 * hd + k]);
                let c = fg * c_prev[k] + ig * gg;
                let tc = c.tanh();
                let h = og * tc;
                g_row[k] = ig;
                g_row[hd + k] = fg;
                g_row[2 * hd + k] = gg;
                g_row[3 * hd + k] = og;
                c_row[k] = c;
                tc_row[k] = tc;
                h_row[k] = h;
                c_prev[k] = c;
                h_prev[k] = h;
            }
            let mut y_row = outputs.row_mut(t);
            for o in 0..od {
                let a = hb[o] + dot(&hw[o * hd..(o + 1) * hd], &h_prev);
                y_row[o] = match self.activation {
                    Activation::Identity => a,
                    Activation::Sigmoid => sigmoid(a),
                };
            }
            if !(h_prev.iter().all(|v| v.is_finite()) && y_row.iter().all(|v| v.is_finite())) {
                return Err(ForgeError::NonFinite { step: t, context: "lstm forward".into() });
            }
        }
        Ok(LstmCache { inputs, gates, cells, tanh_cells, hidden, outputs })
    }

    /// Backpropagates `d_out` (gradient w.r.t. post-activation outputs,
    /// `[L x out]`). Returns parameter gradients and input gradients.
    ///
    /// With `feedback = Some(off)` the run is treated as autoregressive
    /// (see [`LstmNet::forward_feedback`]): gradients reaching input columns
    /// `off..off + out` at step `t` are routed into the output at `t - 1`.
    pub fn backward(
        &self,
        cache: &LstmCache,
        d_out: ArrayView2<f64>,
        feedback: Option<usize>,
    ) -> (LstmNet, Array2<f64>) {
        let len = cache.outputs.nrows();
        let n_in = self.input_dim();
        let hd = self.hidden_dim();
        let od = self.output_dim();
        assert_eq!(d_out.dim(), (len, od), "d_out shape");

        let mut grad = self.zeros_like();
        let mut d_inputs = Array2::zeros((len, n_in));
        let mut d_out = d_out.to_owned();

        let w_in = self.w_in.as_slice().expect("standard layout");
        let u = self.u.as_slice().expect("standard layout");
        let hw = self.head_w.as_slice().expect("standard layout");

        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        let mut da = vec![0.0; od];
        let zero_h = vec![0.0; hd];

        for t in (0..len).rev() {
            let y = cache.outputs.row(t);
            let h = cache.hidden.row(t);
            let h = h.as_slice().expect("standard layout");
            for o in 0..od {
                da[o] = match self.activation {
                    Activation::Identity => d_out[[t, o]],
                    Activation::Sigmoid => d_out[[t, o]] * y[o] * (1.0 - y[o]),
                };
            }
            {
                let ghw = grad.head_w.as_slice_mut().expect("standard layout");
                let ghb = grad.head_b.as_slice_mut().expect("standard layout");
                for o in 0..od {
                    ghb[o] += da[o];
                    axpy(da[o], h, &mut ghw[o * hd..(o + 1) * hd]);
                }
            }
            let mut dh = dh_next.clone();
            for o in 0..od {
                axpy(da[o], &hw[o * hd..(o + 1) * hd], &mut dh);
            }

            let gates = cache.gates.row(t);
            let tc = cache.tanh_cells.row(t);
            let c_prev_row = if t > 0 { Some(cache.cells.row(t - 1)) } else { None };
            for k in 0..hd {
                let ig = gates[k];
                let fg = gates[hd + k];
                let gg = gates[2 * hd + k];
                let og = gates[3 * hd + k];
                let c_prev = c_prev_row.as_ref().map_or(0.0, |r| r[k]);
                let d_o = dh[k] * tc[k];
                let dc = dh[k] * og * (1.0 - tc[k] * tc[k]) + dc_next[k];
                dz[k] = dc * gg * ig * (1.0 - ig);
                dz[hd + k] = dc * c_prev * fg * (1.0 - fg);
                dz[2 * hd + k] = dc * ig * (1.0 - gg * gg);
                dz[3 * hd + k] = d_o * og * (1.0 - og);
                dc_next[k] = dc * fg;
            }

            let x = cache.inputs.row(t);
            let x = x.as_slice().expect("standard layout");
            let h_prev = if t > 0 { cache.hidden.row(t - 1).to_vec() } else { zero_h.clone() };
            {
                let gw = grad.w_in.as_slice_mut().expect("standard layout");
                let gu = grad.u.as_slice_mut().expect("standard layout");
                let gb = grad.b.as_slice_mut().expect("standard layout");
                for r in 0..4 * hd {
                    gb[r] += dz[r];
                    axpy(dz[r], x, &mut gw[r * n_in..(r + 1) * n_in]);
                    axpy(dz[r], &h_prev, &mut gu[r * hd..(r + 1) * hd]);
                }
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            let mut dx_row = d_inputs.row_mut(t);
            let dx = dx_row.as_slice_mut().expect("standard layout");
            for r in 0..4 * hd {
                axpy(dz[r], &w_in[r * n_in..(r + 1) * n_in], dx);
                axpy(dz[r], &u[r * hd..(r + 1) * hd], &mut dh_next);
            }
            if let (Some(off), true) = (feedback, t > 0) {
                for k in 0..od {
                    d_out[[t - 1, k]] += dx[off + k];
                }
            }
        }
        (grad, d_inputs)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// First-order optimiser over a network's flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64, t: u64, m: Vec<f64>, v: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                t: 0,
                m: vec![0.0; num_params],
                v: vec![0.0; num_params],
            },
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, net: &mut LstmNet, grad: &LstmNet, lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in net.slices_mut().into_iter().zip(grad.slices()) {
                    for (x, d) in p.iter_mut().zip(g) {
                        *x -= lr * d;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps, t, m, v } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                let mut idx = 0;
                for (p, g) in net.slices_mut().into_iter().zip(grad.slices()) {
                    for (x, d) in p.iter_mut().zip(g) {
                        m[idx] = *beta1 * m[idx] + (1.0 - *beta1) * d;
                        v[idx] = *beta2 * v[idx] + (1.0 - *beta2) * d * d;
                        let mh = m[idx] / bc1;
                        let vh = v[idx] / bc2;
                        *x -= lr * mh / (vh.sqrt() + *eps);
                        idx += 1;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_activation_of_zero() {
        let net = LstmNet::zeros(3, 2, 1, Activation::Identity);
        let x = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let c = net.forward(x.view()).unwrap();
        assert!(c.outputs.iter().all(|&v| v == 0.0));
        assert!(c.hidden.iter().all(|&v| v == 0.0));
        let net = LstmNet::zeros(3, 2, 1, Activation::Sigmoid);
        let c = net.forward(x.view()).unwrap();
        assert!(c.outputs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = LstmNet::random(2, 3, 2, Activation::Sigmoid, &mut rng);
        let mut other = net.zeros_like();
        other.set_flat(&net.flat());
        assert_eq!(net, other);
        assert_eq!(net.checksum(), other.checksum());
    }

    #[test]
    fn feedback_matches_manual_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = LstmNet::random(3, 4, 2, Activation::Sigmoid, &mut rng);
        let exog = array![[0.3], [-0.2], [0.9]];
        let fb = net.forward_feedback(exog.view()).unwrap();
        let mut inputs = Array2::zeros((3, 3));
        for t in 0..3 {
            inputs[[t, 0]] = exog[[t, 0]];
            if t > 0 {
                inputs[[t, 1]] = fb.outputs[[t - 1, 0]];
                inputs[[t, 2]] = fb.outputs[[t - 1, 1]];
            }
        }
        let plain = net.forward(inputs.view()).unwrap();
        assert_eq!(plain.outputs, fb.outputs);
    }

    #[test]
    fn non_finite_input_reported_with_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = LstmNet::random(1, 2, 1, Activation::Identity, &mut rng);
        let x = array![[0.1], [f64::NAN]];
        match net.forward(x.view()) {
            Err(ForgeError::NonFinite { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
