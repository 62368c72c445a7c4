//! Bidirectional LSTM encoder with hand-written backpropagation.
//!
//! Cell equations, with `z = [h_{t-1}, x_t]`:
//!
//! ```text
//! f = σ(W_f z + b_f)    i = σ(W_i z + b_i)
//! g = tanh(W_c z + b_c) o = σ(W_o z + b_o)
//! C_t = f ⊙ C_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(C_t)
//! ```

use crate::linalg::{self, Matrix};
use crate::{Error, Result, Rng};

/// Gate blocks are stacked row-wise in this order: forget, input,
/// candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    hidden: usize,
    input: usize,
    /// `4h × (h + d)`, acting on `[h_{t-1}, x_t]`.
    pub weights: Matrix,
    /// `4h`.
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            hidden,
            input,
            weights: Matrix::zeros(4 * hidden, hidden + input),
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform weights in ±sqrt(6 / (fan_in + fan_out)) per gate, forget
    /// bias 1, other biases 0.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (2 * hidden + input) as f64).sqrt();
        let weights = Matrix::random_uniform(4 * hidden, hidden + input, bound, rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[..hidden].iter_mut().for_each(|b| *b = 1.0);
        LstmParams {
            hidden,
            input,
            weights,
            bias,
        }
    }

    pub fn from_parts(input: usize, hidden: usize, weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.shape() != (4 * hidden, hidden + input) || bias.len() != 4 * hidden {
            return Err(Error::Shape(format!(
                "lstm expects weights {}x{} and bias {}, got {:?} and {}",
                4 * hidden,
                hidden + input,
                4 * hidden,
                weights.shape(),
                bias.len()
            )));
        }
        Ok(LstmParams {
            hidden,
            input,
            weights,
            bias,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    /// Rows of one gate block of the weight matrix (0 = forget, 1 = input,
    /// 2 = candidate, 3 = output).
    pub fn gate_weights(&self, gate: usize) -> Matrix {
        let h = self.hidden;
        let rows: Vec<&[f64]> = (gate * h..(gate + 1) * h).map(|r| self.weights.row(r)).collect();
        Matrix::from_rows(&rows)
    }

    pub fn blocks(&self) -> [&[f64]; 2] {
        [self.weights.as_slice(), &self.bias]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weights.as_mut_slice(), &mut self.bias]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::Dimension {
                expected: self.input,
                found: x.len(),
            });
        }
        Ok(())
    }
}

/// Intermediate values of one cell step, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    z: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn step(params: &LstmParams, x: &[f64], prev: &LstmState) -> (LstmState, StepCache) {
    let h = params.hidden;
    let mut z = Vec::with_capacity(h + params.input);
    z.extend_from_slice(&prev.h);
    z.extend_from_slice(x);
    let mut pre = params.weights.matvec(&z);
    linalg::axpy(1.0, &params.bias, &mut pre);

    let f: Vec<f64> = pre[..h].iter().map(|&v| linalg::sigmoid(v)).collect();
    let i: Vec<f64> = pre[h..2 * h].iter().map(|&v| linalg::sigmoid(v)).collect();
    let g: Vec<f64> = pre[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = pre[3 * h..].iter().map(|&v| linalg::sigmoid(v)).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let hidden: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    (
        LstmState { h: hidden, c },
        StepCache {
            z,
            f,
            i,
            g,
            o,
            c_prev: prev.c.clone(),
            tanh_c,
        },
    )
}

/// One LSTM step.
pub fn lstm_cell(params: &LstmParams, x: &[f64], prev: &LstmState) -> Result<LstmState> {
    params.check_input(x)?;
    if prev.h.len() != params.hidden || prev.c.len() != params.hidden {
        return Err(Error::Dimension {
            expected: params.hidden,
            found: prev.h.len(),
        });
    }
    Ok(step(params, x, prev).0)
}

/// Runs a unidirectional LSTM from a zero state over `xs` in the given order.
fn run(params: &LstmParams, xs: &[&[f64]]) -> (Vec<Vec<f64>>, Vec<StepCache>) {
    let mut state = LstmState::zeros(params.hidden);
    let mut outputs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    for x in xs {
        let (next, cache) = step(params, x, &state);
        outputs.push(next.h.clone());
        caches.push(cache);
        state = next;
    }
    (outputs, caches)
}

/// Backpropagation through time for a sequence processed by [`run`].
/// `upstream[t]` is the loss gradient with respect to the output at step t.
/// Accumulates parameter gradients into `grads` and returns input gradients.
fn run_backward(
    params: &LstmParams,
    caches: &[StepCache],
    upstream: &[&[f64]],
    grads: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let h = params.hidden;
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dxs = vec![Vec::new(); caches.len()];
    let mut dpre = vec![0.0; 4 * h];
    for t in (0..caches.len()).rev() {
        let c = &caches[t];
        for k in 0..h {
            let dh = upstream[t][k] + dh_next[k];
            let do_ = dh * c.tanh_c[k];
            let dc = dh * c.o[k] * (1.0 - c.tanh_c[k] * c.tanh_c[k]) + dc_next[k];
            let df = dc * c.c_prev[k];
            let di = dc * c.g[k];
            let dg = dc * c.i[k];
            dc_next[k] = dc * c.f[k];
            dpre[k] = df * c.f[k] * (1.0 - c.f[k]);
            dpre[h + k] = di * c.i[k] * (1.0 - c.i[k]);
            dpre[2 * h + k] = dg * (1.0 - c.g[k] * c.g[k]);
            dpre[3 * h + k] = do_ * c.o[k] * (1.0 - c.o[k]);
        }
        grads.weights.add_outer(1.0, &dpre, &c.z);
        linalg::axpy(1.0, &dpre, &mut grads.bias);
        let dz = params.weights.matvec_transposed(&dpre);
        dh_next.copy_from_slice(&dz[..h]);
        dxs[t] = dz[h..].to_vec();
    }
    dxs
}

/// A forward and a backward LSTM whose outputs are concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct BilstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BilstmParams {
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let forward = LstmParams::init(input, hidden, rng);
        let backward = LstmParams::init(input, hidden, rng);
        BilstmParams { forward, backward }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        BilstmParams {
            forward: LstmParams::zeros(input, hidden),
            backward: LstmParams::zeros(input, hidden),
        }
    }

    pub fn new(forward: LstmParams, backward: LstmParams) -> Result<Self> {
        if forward.hidden != backward.hidden || forward.input != backward.input {
            return Err(Error::Shape("forward and backward LSTMs differ in shape".into()));
        }
        Ok(BilstmParams { forward, backward })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn input(&self) -> usize {
        self.forward.input
    }

    /// Width of each output vector, `2h`.
    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        let [a, b] = self.forward.blocks();
        let [c, d] = self.backward.blocks();
        [a, b, c, d]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        let [a, b] = self.forward.blocks_mut();
        let [c, d] = self.backward.blocks_mut();
        [a, b, c, d]
    }

    fn zeros_like(&self) -> BilstmParams {
        BilstmParams::zeros(self.input(), self.hidden())
    }
}

/// Values recorded by [`BilstmParams::forward_tape`] for one backward pass.
#[derive(Debug, Clone)]
pub struct BilstmTape {
    forward: Vec<StepCache>,
    /// In processing order, i.e. reversed positions.
    backward: Vec<StepCache>,
    pub outputs: Vec<Vec<f64>>,
}

impl BilstmParams {
    fn check_sequence(&self, xs: &[Vec<f64>]) -> Result<()> {
        if xs.is_empty() {
            return Err(Error::Empty("bilstm input sequence".into()));
        }
        xs.iter().try_for_each(|x| self.forward.check_input(x))
    }

    /// Forward pass that keeps the intermediates needed by
    /// [`BilstmParams::backward_tape`].
    pub fn forward_tape(&self, xs: &[Vec<f64>]) -> Result<BilstmTape> {
        self.check_sequence(xs)?;
        let n = xs.len();
        let fwd_in: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let bwd_in: Vec<&[f64]> = xs.iter().rev().map(Vec::as_slice).collect();
        let (fwd_out, fwd_cache) = run(&self.forward, &fwd_in);
        let (bwd_out, bwd_cache) = run(&self.backward, &bwd_in);
        let outputs = (0..n)
            .map(|t| {
                let mut v = fwd_out[t].clone();
                v.extend_from_slice(&bwd_out[n - 1 - t]);
                v
            })
            .collect();
        Ok(BilstmTape {
            forward: fwd_cache,
            backward: bwd_cache,
            outputs,
        })
    }

    /// Gradients of a loss with respect to the parameters and the inputs,
    /// given `upstream[t] = ∂loss/∂output[t]`.
    pub fn backward_tape(
        &self,
        tape: &BilstmTape,
        upstream: &[Vec<f64>],
    ) -> Result<(BilstmParams, Vec<Vec<f64>>)> {
        let n = tape.outputs.len();
        let h = self.hidden();
        if upstream.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: upstream.len(),
            });
        }
        if let Some(g) = upstream.iter().find(|g| g.len() != 2 * h) {
            return Err(Error::Dimension {
                expected: 2 * h,
                found: g.len(),
            });
        }
        let mut grads = self.zeros_like();
        let up_fwd: Vec<&[f64]> = upstream.iter().map(|g| &g[..h]).collect();
        let up_bwd: Vec<&[f64]> = upstream.iter().rev().map(|g| &g[h..]).collect();
        let dx_fwd = run_backward(&self.forward, &tape.forward, &up_fwd, &mut grads.forward);
        let dx_bwd = run_backward(&self.backward, &tape.backward, &up_bwd, &mut grads.backward);
        let dxs = (0..n)
            .map(|t| {
                let mut d = dx_fwd[t].clone();
                linalg::axpy(1.0, &dx_bwd[n - 1 - t], &mut d);
                d
            })
            .collect();
        Ok((grads, dxs))
    }
}

/// Per-position concatenation of the forward hidden state over `x_1..x_t`
/// and the backward hidden state over `x_N..x_t`, both from zero states.
pub fn bilstm_forward(params: &BilstmParams, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    Ok(params.forward_tape(xs)?.outputs)
}

/// Exact reverse-mode gradients of the forward computation.
pub fn bilstm_backward(
    params: &BilstmParams,
    xs: &[Vec<f64>],
    upstream: &[Vec<f64>],
) -> Result<(BilstmParams, Vec<Vec<f64>>)> {
    let tape = params.forward_tape(xs)?;
    params.backward_tape(&tape, upstream)
}

/// Stacked BiLSTM layers; layer `l + 1` reads the `2h` outputs of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<BilstmParams>,
}

#[derive(Debug, Clone)]
pub struct EncoderTape {
    layers: Vec<BilstmTape>,
}

impl EncoderTape {
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.layers.last().expect("encoder has at least one layer").outputs
    }
}

impl Encoder {
    pub fn init(input: usize, hidden: usize, layers: usize, rng: &mut Rng) -> Self {
        let layers = (0..layers.max(1))
            .map(|l| BilstmParams::init(if l == 0 { input } else { 2 * hidden }, hidden, rng))
            .collect();
        Encoder { layers }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, BilstmParams::output_dim)
    }

    pub fn forward_tape(&self, xs: &[Vec<f64>]) -> Result<EncoderTape> {
        let mut tapes: Vec<BilstmTape> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = tapes.last().map_or(xs, |t| t.outputs.as_slice());
            let tape = layer.forward_tape(input)?;
            tapes.push(tape);
        }
        Ok(EncoderTape { layers: tapes })
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = self.forward_tape(xs)?;
        Ok(tape.layers.pop().expect("at least one layer").outputs)
    }

    /// Parameter gradients per layer, and input gradients.
    pub fn backward_tape(
        &self,
        tape: &EncoderTape,
        upstream: &[Vec<f64>],
    ) -> Result<(Vec<BilstmParams>, Vec<Vec<f64>>)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.to_vec();
        for (layer, t) in self.layers.iter().zip(&tape.layers).rev() {
            let (pg, dx) = layer.backward_tape(t, &g)?;
            grads.push(pg);
            g = dx;
        }
        grads.reverse();
        Ok((grads, g))
    }
}
