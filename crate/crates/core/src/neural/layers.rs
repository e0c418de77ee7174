//! Forward and backward kernels for each layer type, on flat slices.
//!
//! Weight layouts (row-major):
//! - dense: `[output][input]`
//! - lstm: input weights `[4*hidden][input]`, recurrent `[4*hidden][hidden]`,
//!   bias `[4*hidden]`, gate order input, forget, cell, output
//! - conv1d: `[filters][kernel][in_channels]`

use super::spec::{sigmoid, Activation};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn dense_forward(
    weight: &[f64],
    bias: &[f64],
    input: &[f64],
    activation: Activation,
) -> Vec<f64> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| activation.apply(b + dot(&weight[o * n_in..(o + 1) * n_in], input)))
        .collect()
}

/// Accumulates parameter gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    weight: &[f64],
    input: &[f64],
    output: &[f64],
    activation: Activation,
    grad_output: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let n_in = input.len();
    let mut grad_input = vec![0.0; n_in];
    for (o, (&y, &dy)) in output.iter().zip(grad_output).enumerate() {
        let d = dy * activation.derivative_from_output(y);
        if d == 0.0 {
            continue;
        }
        grad_bias[o] += d;
        axpy(d, input, &mut grad_weight[o * n_in..(o + 1) * n_in]);
        axpy(d, &weight[o * n_in..(o + 1) * n_in], &mut grad_input);
    }
    grad_input
}

/// Per-sequence activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace {
    pub steps: usize,
    pub inputs: Vec<f64>,
    /// Post-activation gates, `4*hidden` per step.
    pub gates: Vec<f64>,
    /// Cell states including the zero initial state, `hidden * (steps + 1)`.
    pub cells: Vec<f64>,
    /// Hidden states including the zero initial state.
    pub hiddens: Vec<f64>,
}

impl LstmTrace {
    pub fn final_hidden(&self, hidden: usize) -> &[f64] {
        &self.hiddens[self.steps * hidden..(self.steps + 1) * hidden]
    }
}

pub(crate) fn lstm_forward(
    w_in: &[f64],
    w_rec: &[f64],
    bias: &[f64],
    inputs: &[f64],
    n_in: usize,
    hidden: usize,
) -> LstmTrace {
    let steps = inputs.len() / n_in;
    let g4 = 4 * hidden;
    let mut gates = vec![0.0; steps * g4];
    let mut cells = vec![0.0; (steps + 1) * hidden];
    let mut hiddens = vec![0.0; (steps + 1) * hidden];
    let mut z = vec![0.0; g4];
    for t in 0..steps {
        let x = &inputs[t * n_in..(t + 1) * n_in];
        let h_prev = &hiddens[t * hidden..(t + 1) * hidden];
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = bias[r]
                + dot(&w_in[r * n_in..(r + 1) * n_in], x)
                + dot(&w_rec[r * hidden..(r + 1) * hidden], h_prev);
        }
        let g = &mut gates[t * g4..(t + 1) * g4];
        for k in 0..hidden {
            g[k] = sigmoid(z[k]);
            g[hidden + k] = sigmoid(z[hidden + k]);
            g[2 * hidden + k] = z[2 * hidden + k].tanh();
            g[3 * hidden + k] = sigmoid(z[3 * hidden + k]);
        }
        for k in 0..hidden {
            let c_prev = cells[t * hidden + k];
            let c = g[hidden + k] * c_prev + g[k] * g[2 * hidden + k];
            cells[(t + 1) * hidden + k] = c;
            hiddens[(t + 1) * hidden + k] = g[3 * hidden + k] * c.tanh();
        }
    }
    LstmTrace {
        steps,
        inputs: inputs.to_vec(),
        gates,
        cells,
        hiddens,
    }
}

/// Backpropagation through time from a gradient on the final hidden state.
/// Returns the gradient with respect to every input row.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    w_in: &[f64],
    w_rec: &[f64],
    trace: &LstmTrace,
    n_in: usize,
    hidden: usize,
    grad_final_hidden: &[f64],
    grad_w_in: &mut [f64],
    grad_w_rec: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let g4 = 4 * hidden;
    let mut grad_inputs = vec![0.0; trace.inputs.len()];
    let mut dh = grad_final_hidden.to_vec();
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; g4];
    for t in (0..trace.steps).rev() {
        let g = &trace.gates[t * g4..(t + 1) * g4];
        let c_prev = &trace.cells[t * hidden..(t + 1) * hidden];
        let c = &trace.cells[(t + 1) * hidden..(t + 2) * hidden];
        for k in 0..hidden {
            let (i, f, gg, o) = (g[k], g[hidden + k], g[2 * hidden + k], g[3 * hidden + k]);
            let tc = c[k].tanh();
            let d_o = dh[k] * tc;
            let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dc * gg * i * (1.0 - i);
            dz[hidden + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * hidden + k] = dc * i * (1.0 - gg * gg);
            dz[3 * hidden + k] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        let x = &trace.inputs[t * n_in..(t + 1) * n_in];
        let h_prev = &trace.hiddens[t * hidden..(t + 1) * hidden];
        let dx = &mut grad_inputs[t * n_in..(t + 1) * n_in];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad_bias[r] += d;
            axpy(d, x, &mut grad_w_in[r * n_in..(r + 1) * n_in]);
            axpy(d, h_prev, &mut grad_w_rec[r * hidden..(r + 1) * hidden]);
            axpy(d, &w_in[r * n_in..(r + 1) * n_in], dx);
            axpy(d, &w_rec[r * hidden..(r + 1) * hidden], &mut dh);
        }
    }
    grad_inputs
}

/// `input` is `len x channels`; returns `(len - kernel + 1) x filters`.
pub(crate) fn conv1d_forward(
    weight: &[f64],
    bias: &[f64],
    input: &[f64],
    channels: usize,
    kernel: usize,
    activation: Activation,
) -> Vec<f64> {
    let len = input.len() / channels;
    let filters = bias.len();
    let out_len = len + 1 - kernel;
    let span = kernel * channels;
    let mut out = vec![0.0; out_len * filters];
    for p in 0..out_len {
        let window = &input[p * channels..p * channels + span];
        for f in 0..filters {
            out[p * filters + f] =
                activation.apply(bias[f] + dot(&weight[f * span..(f + 1) * span], window));
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    weight: &[f64],
    input: &[f64],
    output: &[f64],
    channels: usize,
    kernel: usize,
    activation: Activation,
    grad_output: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let filters = grad_bias.len();
    let out_len = output.len() / filters;
    let span = kernel * channels;
    let mut grad_input = vec![0.0; input.len()];
    for p in 0..out_len {
        let window = &input[p * channels..p * channels + span];
        for f in 0..filters {
            let idx = p * filters + f;
            let d = grad_output[idx] * activation.derivative_from_output(output[idx]);
            if d == 0.0 {
                continue;
            }
            grad_bias[f] += d;
            axpy(d, window, &mut grad_weight[f * span..(f + 1) * span]);
            axpy(
                d,
                &weight[f * span..(f + 1) * span],
                &mut grad_input[p * channels..p * channels + span],
            );
        }
    }
    grad_input
}

/// Non-overlapping max pooling along time; trailing rows that do not fill a
/// window are dropped. Returns the output and the flat argmax of each cell.
pub(crate) fn maxpool1d_forward(
    input: &[f64],
    channels: usize,
    pool: usize,
) -> (Vec<f64>, Vec<usize>) {
    let out_len = input.len() / channels / pool;
    let mut out = vec![f64::NEG_INFINITY; out_len * channels];
    let mut argmax = vec![0; out_len * channels];
    for p in 0..out_len {
        for c in 0..channels {
            let o = p * channels + c;
            for j in 0..pool {
                let i = (p * pool + j) * channels + c;
                // strict comparison keeps the first maximum
                if input[i] > out[o] {
                    out[o] = input[i];
                    argmax[o] = i;
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool1d_backward(
    argmax: &[usize],
    input_len: usize,
    grad_output: &[f64],
) -> Vec<f64> {
    let mut grad_input = vec![0.0; input_len];
    for (&i, &g) in argmax.iter().zip(grad_output) {
        grad_input[i] += g;
    }
    grad_input
}
