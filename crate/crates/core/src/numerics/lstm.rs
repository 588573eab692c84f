//! LSTM cell with gate order input, forget, candidate, output.

use super::graph::{Graph, Var};
use super::{uniform_init, NumericsError, Tensor};
use rand::Rng;

/// Weights of a single LSTM layer.
///
/// `input` is `[in, 4H]`, `recurrent` is `[H, 4H]` and `bias` has `4H`
/// entries; the four `H`-wide column blocks are the i, f, g, o gates.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub input: Tensor,
    pub recurrent: Tensor,
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input: Tensor::zeros(&[input_dim, 4 * hidden]),
            recurrent: Tensor::zeros(&[hidden, 4 * hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// Uniform initialization with `fan_in = input_dim + hidden`.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let fan_in = input_dim + hidden;
        Self {
            input: uniform_init(&[input_dim, 4 * hidden], fan_in, rng),
            recurrent: uniform_init(&[hidden, 4 * hidden], fan_in, rng),
            bias: uniform_init(&[4 * hidden], fan_in, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.shape()[0]
    }

    pub fn param_count(input_dim: usize, hidden: usize) -> usize {
        4 * hidden * (input_dim + hidden) + 4 * hidden
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One LSTM step on plain vectors. Returns `(h', c')`.
pub fn lstm_cell_forward(x: &[f64], h: &[f64], c: &[f64], weights: &LstmWeights) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
    let hidden = weights.hidden();
    let input_dim = weights.input_dim();
    if x.len() != input_dim || h.len() != hidden || c.len() != hidden {
        return Err(NumericsError::Shape(format!(
            "lstm cell expects x={input_dim}, h=c={hidden}; got x={}, h={}, c={}",
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let mut gates = weights.bias.data().to_vec();
    super::tensor::matmul_acc(x, weights.input.data(), &mut gates, 1, input_dim, 4 * hidden);
    super::tensor::matmul_acc(h, weights.recurrent.data(), &mut gates, 1, hidden, 4 * hidden);
    let mut h_next = vec![0.0; hidden];
    let mut c_next = vec![0.0; hidden];
    for j in 0..hidden {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[hidden + j]);
        let g = gates[2 * hidden + j].tanh();
        let o = sigmoid(gates[3 * hidden + j]);
        c_next[j] = f * c[j] + i * g;
        h_next[j] = o * c_next[j].tanh();
    }
    Ok((h_next, c_next))
}

/// Graph handles for an [`LstmWeights`] registered as parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
    pub hidden: usize,
}

impl LstmVars {
    pub fn register(g: &mut Graph, w: &LstmWeights) -> Self {
        Self {
            input: g.param(w.input.clone()),
            recurrent: g.param(w.recurrent.clone()),
            bias: g.param(w.bias.clone()),
            hidden: w.hidden(),
        }
    }

    /// Batched step on the tape: `x` is `[B, in]`, `h` and `c` are `[B, H]`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var), NumericsError> {
        let hd = self.hidden;
        let xi = g.matmul(x, self.input)?;
        let hr = g.matmul(h, self.recurrent)?;
        let pre = g.add(xi, hr)?;
        let gates = g.add_bias(pre, self.bias)?;
        let i_pre = g.slice_cols(gates, 0, hd)?;
        let f_pre = g.slice_cols(gates, hd, hd)?;
        let g_pre = g.slice_cols(gates, 2 * hd, hd)?;
        let o_pre = g.slice_cols(gates, 3 * hd, hd)?;
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let cand = g.tanh(g_pre);
        let o = g.sigmoid(o_pre);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}
