use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => super::tanh(v),
        }
    }
}

/// Fully connected network: affine layers with `activation` between them and
/// a linear output layer. Weights are stored `out x in`, biases `1 x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    output_dim: usize,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
    #[serde(default)]
    activation: Activation,
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        let dims = layer_dims(input_dim, hidden_dims, output_dim);
        let weights = dims.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect();
        let biases = dims.windows(2).map(|w| Matrix::zeros(1, w[1])).collect();
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            weights,
            biases,
            activation: Activation::Tanh,
        }
    }

    /// Glorot-uniform hidden layers; final layer zero so the output starts at 0.
    pub fn glorot_zero_output<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(input_dim, hidden_dims, output_dim);
        let n = net.weights.len();
        for w in net.weights.iter_mut().take(n - 1) {
            glorot_fill(w, rng);
        }
        net
    }

    /// Glorot-uniform on every layer, biases zero.
    pub fn glorot<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(input_dim, hidden_dims, output_dim);
        for w in &mut net.weights {
            glorot_fill(w, rng);
        }
        net
    }

    /// Reassembles a network from explicit layers, checking shapes and finiteness.
    pub fn from_parts(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        weights: Vec<Matrix>,
        biases: Vec<Matrix>,
    ) -> Result<Self> {
        let net = Self {
            input_dim,
            hidden_dims,
            output_dim,
            weights,
            biases,
            activation: Activation::Tanh,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = layer_dims(self.input_dim, &self.hidden_dims, self.output_dim);
        if self.weights.len() != dims.len() - 1 || self.biases.len() != dims.len() - 1 {
            return Err(Error::Input(format!(
                "expected {} layers, found {} weight and {} bias arrays",
                dims.len() - 1,
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (l, w) in dims.windows(2).enumerate() {
            if self.weights[l].shape() != (w[1], w[0]) {
                return Err(Error::Input(format!(
                    "layer {l} weight is {}x{}, expected {}x{}",
                    self.weights[l].rows(),
                    self.weights[l].cols(),
                    w[1],
                    w[0]
                )));
            }
            if self.biases[l].shape() != (1, w[1]) {
                return Err(Error::Input(format!(
                    "layer {l} bias has {} entries, expected {}",
                    self.biases[l].len(),
                    w[1]
                )));
            }
            if !self.weights[l].is_finite() || !self.biases[l].is_finite() {
                return Err(Error::Input(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Matrix] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Parameters in slot order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Matrix> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn num_param_slots(&self) -> usize {
        2 * self.weights.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Input(format!(
                "network input has length {}, expected {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut cur = x.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut next = b.as_slice().to_vec();
            for (o, acc) in next.iter_mut().enumerate() {
                // same accumulation order as the batch path, so results match bitwise
                for (c, a) in cur.iter().zip(w.row(o)) {
                    *acc += c * a;
                }
            }
            if l < last {
                next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Row-wise forward pass over a `B x input_dim` batch.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim {
            return Err(Error::Input(format!(
                "network input has {} columns, expected {}",
                x.cols(),
                self.input_dim
            )));
        }
        let mut cur = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (rows, inp) = cur.shape();
            let out = w.rows();
            let mut data = Vec::with_capacity(rows * out);
            for r in 0..rows {
                let xr = cur.row(r);
                for o in 0..out {
                    let wr = w.row(o);
                    let mut acc = b.as_slice()[o];
                    for i in 0..inp {
                        acc += xr[i] * wr[i];
                    }
                    data.push(if l < last { self.activation.apply(acc) } else { acc });
                }
            }
            cur = Matrix::from_raw(rows, out, data);
        }
        Ok(cur)
    }

    /// Records the forward pass on `tape`, binding parameters to slots
    /// `first_slot..first_slot + num_param_slots()`.
    pub fn forward_taped(&self, tape: &mut Tape, x: Var, first_slot: usize) -> Var {
        let mut cur = x;
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = tape.param(first_slot + 2 * l, w.clone());
            let bv = tape.param(first_slot + 2 * l + 1, b.clone());
            cur = tape.affine(cur, wv, bv);
            if l < last {
                cur = match self.activation {
                    Activation::Tanh => tape.tanh(cur),
                };
            }
        }
        cur
    }
}

fn layer_dims(input_dim: usize, hidden: &[usize], output_dim: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(output_dim);
    dims
}

fn glorot_fill<R: Rng + ?Sized>(w: &mut Matrix, rng: &mut R) {
    let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
    for v in w.as_mut_slice() {
        *v = rng.gen_range(-limit..=limit);
    }
}
