//! Stacked LSTM with optional residual connections.
//!
//! Gate rows of the fused weight matrix are ordered input, forget, cell,
//! output; every layer reads `[x; h_prev]`.

use super::ops::{axpy, gemm_tn_add, matvec, matvec_t_add, sigmoid};
use super::tensor::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `[4h, in + h]`
    pub w: Tensor,
    /// `[4h]`
    pub b: Tensor,
    input: usize,
    hidden: usize,
}

/// Recurrent state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Activations of one layer over a sequence, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    len: usize,
    /// `[T, in + h]` layer inputs `[x_t; h_{t-1}]`.
    z: Vec<f64>,
    /// `[T, 4h]` post-nonlinearity gates.
    gates: Vec<f64>,
    /// `[T + 1, h]`, row 0 is the initial cell.
    c: Vec<f64>,
    /// `[T, h]` tanh of the new cell.
    tc: Vec<f64>,
    /// `[T + 1, h]`, row 0 is the initial hidden state.
    h: Vec<f64>,
}

impl LayerTrace {
    /// Hidden states `h_1..h_T`, `[T, h]`.
    pub fn outputs(&self) -> &[f64] {
        let hid = self.h.len() / (self.len + 1);
        &self.h[hid..]
    }

    pub fn final_state(&self) -> LstmState {
        let hid = self.h.len() / (self.len + 1);
        LstmState {
            h: self.h[self.len * hid..].to_vec(),
            c: self.c[self.len * hid..].to_vec(),
        }
    }
}

/// Input-side gradients of one layer.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub dx: Vec<f64>,
    pub d_init: LstmState,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(&[4 * hidden, input + hidden]),
            b: Tensor::zeros(&[4 * hidden]),
            input,
            hidden,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// One time step; `gates` is scratch of length `4h`.
    pub fn step(&self, x: &[f64], state: &mut LstmState, gates: &mut [f64]) {
        let (n_in, h) = (self.input, self.hidden);
        let mut z = Vec::with_capacity(n_in + h);
        z.extend_from_slice(x);
        z.extend_from_slice(&state.h);
        self.cell(&z, &state.c.clone(), gates, &mut state.c, &mut state.h, None);
    }

    fn cell(&self, z: &[f64], c_prev: &[f64], gates: &mut [f64], c: &mut [f64], h_out: &mut [f64], tc_out: Option<&mut [f64]>) {
        let h = self.hidden;
        matvec(self.w.data(), self.input + h, z, gates);
        for (g, b) in gates.iter_mut().zip(self.b.data()) {
            *g += b;
        }
        let mut tc_local = [0.0; 0];
        let tc: &mut [f64] = match tc_out {
            Some(t) => t,
            None => &mut tc_local,
        };
        for k in 0..h {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[h + k]);
            let g = gates[2 * h + k].tanh();
            let o = sigmoid(gates[3 * h + k]);
            gates[k] = i;
            gates[h + k] = f;
            gates[2 * h + k] = g;
            gates[3 * h + k] = o;
            let cn = f * c_prev[k] + i * g;
            let t = cn.tanh();
            c[k] = cn;
            h_out[k] = o * t;
            if !tc.is_empty() {
                tc[k] = t;
            }
        }
    }

    /// Runs `len` steps over `xs` (`[len, in]`).
    pub fn forward(&self, xs: &[f64], len: usize, init: &LstmState) -> Result<LayerTrace> {
        let (n_in, h) = (self.input, self.hidden);
        if xs.len() != len * n_in {
            return Err(Error::Shape {
                context: "lstm input",
                expected: vec![len, n_in],
                actual: vec![xs.len()],
            });
        }
        if init.h.len() != h || init.c.len() != h {
            return Err(Error::Shape {
                context: "lstm state",
                expected: vec![h],
                actual: vec![init.h.len(), init.c.len()],
            });
        }
        let zw = n_in + h;
        let mut tr = LayerTrace {
            len,
            z: vec![0.0; len * zw],
            gates: vec![0.0; len * 4 * h],
            c: vec![0.0; (len + 1) * h],
            tc: vec![0.0; len * h],
            h: vec![0.0; (len + 1) * h],
        };
        tr.c[..h].copy_from_slice(&init.c);
        tr.h[..h].copy_from_slice(&init.h);
        for t in 0..len {
            let z = &mut tr.z[t * zw..(t + 1) * zw];
            z[..n_in].copy_from_slice(&xs[t * n_in..(t + 1) * n_in]);
            z[n_in..].copy_from_slice(&tr.h[t * h..(t + 1) * h]);
            let (c_prev, c_next) = tr.c.split_at_mut((t + 1) * h);
            let (_, h_next) = tr.h.split_at_mut((t + 1) * h);
            self.cell(
                &tr.z[t * zw..(t + 1) * zw],
                &c_prev[t * h..],
                &mut tr.gates[t * 4 * h..(t + 1) * 4 * h],
                &mut c_next[..h],
                &mut h_next[..h],
                Some(&mut tr.tc[t * h..(t + 1) * h]),
            );
        }
        Ok(tr)
    }

    /// Backpropagates `dh_out` (`[T, h]`, gradients on `h_1..h_T`) and
    /// gradients on the final state, accumulating into `grad`.
    pub fn backward(&self, tr: &LayerTrace, dh_out: &[f64], d_final: Option<&LstmState>, grad: &mut LstmLayer) -> LayerGrad {
        let (n_in, h, len) = (self.input, self.hidden, tr.len);
        let zw = n_in + h;
        let (mut dh_next, mut dc_next) = match d_final {
            Some(s) => (s.h.clone(), s.c.clone()),
            None => (vec![0.0; h], vec![0.0; h]),
        };
        let mut dpre = vec![0.0; len * 4 * h];
        let mut dx = vec![0.0; len * n_in];
        let mut dz = vec![0.0; zw];
        for t in (0..len).rev() {
            let a = &tr.gates[t * 4 * h..(t + 1) * 4 * h];
            let d = &mut dpre[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                let dh = dh_out[t * h + k] + dh_next[k];
                let (i, f, g, o) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
                let tc = tr.tc[t * h + k];
                let c_prev = tr.c[t * h + k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                d[k] = dc * g * i * (1.0 - i);
                d[h + k] = dc * c_prev * f * (1.0 - f);
                d[2 * h + k] = dc * i * (1.0 - g * g);
                d[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dz.fill(0.0);
            matvec_t_add(self.w.data(), d, &mut dz);
            dx[t * n_in..(t + 1) * n_in].copy_from_slice(&dz[..n_in]);
            dh_next.copy_from_slice(&dz[n_in..]);
        }
        gemm_tn_add(4 * h, zw, len, &dpre, &tr.z, grad.w.data_mut());
        let db = grad.b.data_mut();
        for row in dpre.chunks_exact(4 * h) {
            axpy(1.0, row, db);
        }
        LayerGrad {
            dx,
            d_init: LstmState { h: dh_next, c: dc_next },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
    residual: bool,
}

/// Per-layer traces plus the (possibly residual) layer outputs.
#[derive(Debug, Clone)]
pub struct StackTrace {
    pub layers: Vec<LayerTrace>,
    outputs: Vec<Vec<f64>>,
    len: usize,
}

impl StackTrace {
    /// Top-layer outputs, `[T, h]`.
    pub fn top(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn final_states(&self) -> Vec<LstmState> {
        self.layers.iter().map(LayerTrace::final_state).collect()
    }
}

impl LstmStack {
    /// Residual connections feed each layer's input into its output from the
    /// second layer on, where widths agree by construction.
    pub fn zeros(input: usize, hidden: usize, layers: usize, residual: bool) -> Result<Self> {
        if layers == 0 || hidden == 0 || input == 0 {
            return Err(Error::InvalidArgument("lstm stack needs positive sizes".into()));
        }
        let layers = (0..layers)
            .map(|l| LstmLayer::zeros(if l == 0 { input } else { hidden }, hidden))
            .collect();
        Ok(Self { layers, residual })
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn adds_residual(&self, l: usize) -> bool {
        self.residual && l > 0
    }

    pub fn zero_states(&self) -> Vec<LstmState> {
        vec![LstmState::zeros(self.hidden_size()); self.layers.len()]
    }

    pub fn forward(&self, xs: &[f64], len: usize, init: Option<&[LstmState]>) -> Result<StackTrace> {
        let zeros;
        let init = match init {
            Some(s) => s,
            None => {
                zeros = self.zero_states();
                &zeros
            }
        };
        if init.len() != self.layers.len() {
            return Err(Error::Shape {
                context: "lstm stack states",
                expected: vec![self.layers.len()],
                actual: vec![init.len()],
            });
        }
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { xs } else { &outputs[l - 1] };
            let tr = layer.forward(input, len, &init[l])?;
            let mut out = tr.outputs().to_vec();
            if self.adds_residual(l) {
                axpy(1.0, input, &mut out);
            }
            traces.push(tr);
            outputs.push(out);
        }
        Ok(StackTrace {
            layers: traces,
            outputs,
            len,
        })
    }

    /// One step for incremental decoding; returns the top output.
    pub fn step(&self, x: &[f64], states: &mut [LstmState]) -> Vec<f64> {
        let mut input = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut gates = vec![0.0; 4 * layer.hidden];
            layer.step(&input, &mut states[l], &mut gates);
            let mut out = states[l].h.clone();
            if self.adds_residual(l) {
                axpy(1.0, &input, &mut out);
            }
            input = out;
        }
        input
    }

    /// Returns gradients on the inputs and on the initial states.
    pub fn backward(
        &self,
        tr: &StackTrace,
        d_top: &[f64],
        d_final: Option<&[LstmState]>,
        grad: &mut LstmStack,
    ) -> (Vec<f64>, Vec<LstmState>) {
        let mut d_out = d_top.to_vec();
        let mut d_init = vec![LstmState::zeros(0); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let g = self.layers[l].backward(&tr.layers[l], &d_out, d_final.map(|d| &d[l]), &mut grad.layers[l]);
            let mut dx = g.dx;
            if self.adds_residual(l) {
                axpy(1.0, &d_out, &mut dx);
            }
            d_init[l] = g.d_init;
            d_out = dx;
        }
        (d_out, d_init)
    }
}

impl ParamSet for LstmStack {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (l, layer) in self.layers.iter().enumerate() {
            f(&format!("l{l}.w"), &layer.w);
            f(&format!("l{l}.b"), &layer.b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("l{l}.w"), &mut layer.w);
            f(&format!("l{l}.b"), &mut layer.b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::gradcheck::{grad_check, GradCheckOptions};
    use crate::nnet::ops::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_stack(input: usize, hidden: usize, layers: usize, seed: u64) -> LstmStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = LstmStack::zeros(input, hidden, layers, true).unwrap();
        s.visit_mut(&mut |_, t| *t = Tensor::uniform(t.shape(), 0.5, &mut rng));
        s
    }

    #[test]
    fn zero_weights_zero_inputs_give_zero_states() {
        let s = LstmStack::zeros(3, 4, 3, true).unwrap();
        let tr = s.forward(&[0.0; 15], 5, None).unwrap();
        assert!(tr.top().iter().all(|v| *v == 0.0));
        assert!(tr.final_states().iter().all(|st| st.h.iter().chain(&st.c).all(|v| *v == 0.0)));
    }

    #[test]
    fn length_one_equals_single_step() {
        let s = random_stack(3, 4, 3, 7);
        let x = [0.3, -0.1, 0.9];
        let tr = s.forward(&x, 1, None).unwrap();
        let mut states = s.zero_states();
        let top = s.step(&x, &mut states);
        assert_eq!(tr.top(), top.as_slice());
        assert_eq!(tr.final_states(), states);
    }

    #[test]
    fn shape_errors_name_dimensions() {
        let s = LstmStack::zeros(3, 4, 2, true).unwrap();
        let err = s.forward(&[0.0; 7], 2, None).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn stack_gradients_match_finite_differences() {
        let (input, hidden, len) = (3, 4, 5);
        let mut s = random_stack(input, hidden, 3, 11);
        let xs: Vec<f64> = (0..len * input).map(|i| (i as f64 * 0.7).sin()).collect();
        let proj: Vec<f64> = (0..len * hidden).map(|i| (i as f64 * 0.3).cos()).collect();
        let fin: Vec<f64> = (0..hidden).map(|i| 0.5 - i as f64 * 0.2).collect();
        let loss = |s: &LstmStack| {
            let tr = s.forward(&xs, len, None).unwrap();
            let last = tr.final_states();
            Ok(dot(tr.top(), &proj) + dot(&last[1].c, &fin) + dot(&last[2].h, &fin))
        };
        let tr = s.forward(&xs, len, None).unwrap();
        let mut grad = s.clone();
        grad.zero();
        let mut d_final = s.zero_states();
        d_final[1].c = fin.clone();
        d_final[2].h = fin.clone();
        let (dx, _) = s.backward(&tr, &proj, Some(&d_final), &mut grad);
        let report = grad_check(&mut s, &grad, loss, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        // input gradient by central differences
        let eps = 1e-5;
        for i in 0..xs.len() {
            let mut xp = xs.clone();
            xp[i] += eps;
            let mut xm = xs.clone();
            xm[i] -= eps;
            let f = |x: &[f64]| {
                let tr = s.forward(x, len, None).unwrap();
                let last = tr.final_states();
                dot(tr.top(), &proj) + dot(&last[1].c, &fin) + dot(&last[2].h, &fin)
            };
            let num = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((num - dx[i]).abs() < 1e-7, "{i}: {num} vs {}", dx[i]);
        }
    }
}
