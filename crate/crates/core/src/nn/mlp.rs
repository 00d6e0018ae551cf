//! Tanh multilayer perceptrons with exact forward-mode tangents and reverse-mode
//! parameter gradients.
//!
//! The batched entry points work on "dual blocks": an input matrix whose columns are
//! grouped in blocks of `k`, where the first column of each block is a point and the
//! remaining `k − 1` columns are tangent directions at that point. Biases apply to the
//! point column only and `tanh′ = 1 − tanh²` scales the tangent columns.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Affine layers with tanh between them and an identity output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// A point with one tangent direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVector {
    pub value: DVector<f64>,
    pub tangent: DVector<f64>,
}

impl DualVector {
    pub fn new(value: DVector<f64>, tangent: DVector<f64>) -> Result<Self> {
        if value.len() != tangent.len() {
            return Err(Error::Dimension { expected: value.len(), got: tangent.len() });
        }
        Ok(Self { value, tangent })
    }
}

/// Activations cached by [`Mlp::forward_batch`] for the reverse pass.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    block: usize,
    /// Layer inputs: `inputs[0]` is the network input, `inputs[l]` the output of hidden layer `l`.
    inputs: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Weights("network without layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].weights.ncols() != pair[0].weights.nrows() {
                return Err(Error::Dimension {
                    expected: pair[0].weights.nrows(),
                    got: pair[1].weights.ncols(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::Dimension { expected: l.weights.nrows(), got: l.bias.len() });
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Weights("non-finite parameter".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-limit..limit)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Layer { weights: DMatrix::zeros(w[1], w[0]), bias: DVector::zeros(w[1]) })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.weights.nrows())).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.nrows())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Copies parameters into `out` (layer by layer: weights column-major, then bias).
    pub fn write_params(&self, out: &mut [f64]) {
        let mut k = 0;
        for l in &self.layers {
            out[k..k + l.weights.len()].copy_from_slice(l.weights.as_slice());
            k += l.weights.len();
            out[k..k + l.bias.len()].copy_from_slice(l.bias.as_slice());
            k += l.bias.len();
        }
    }

    pub fn read_params(&mut self, src: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&src[k..k + n]);
            k += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&src[k..k + n]);
            k += n;
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: len });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<DVector<f64>> {
        self.check_input(input.len())?;
        let mut h = DVector::from_column_slice(input);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = &l.weights * h + &l.bias;
            if i < last {
                h.apply(|v| *v = v.tanh());
            }
        }
        Ok(h)
    }

    /// Value and directional derivative `J(x)·t`.
    pub fn forward_dual(&self, input: &DualVector) -> Result<DualVector> {
        self.check_input(input.value.len())?;
        let mut m = DMatrix::zeros(self.input_dim(), 2);
        m.set_column(0, &input.value);
        m.set_column(1, &input.tangent);
        let out = self.forward_batch(&m, 2)?.output;
        Ok(DualVector { value: out.column(0).into_owned(), tangent: out.column(1).into_owned() })
    }

    /// Gradient of `⟨cotangent, forward(input)⟩` with respect to every weight and bias,
    /// returned in the network's own shape.
    pub fn param_gradient(&self, input: &[f64], cotangent: &[f64]) -> Result<Mlp> {
        self.check_input(input.len())?;
        if cotangent.len() != self.output_dim() {
            return Err(Error::Dimension { expected: self.output_dim(), got: cotangent.len() });
        }
        let trace = self.forward_batch(&DMatrix::from_column_slice(input.len(), 1, input), 1)?;
        let mut grad = Mlp::zeros(&self.widths());
        self.backward_batch(&trace, &DMatrix::from_column_slice(cotangent.len(), 1, cotangent), &mut grad);
        Ok(grad)
    }

    /// Forward pass over dual blocks of width `block` (see module docs).
    pub fn forward_batch(&self, input: &DMatrix<f64>, block: usize) -> Result<BatchTrace> {
        self.check_input(input.nrows())?;
        if block == 0 || !input.ncols().is_multiple_of(block) {
            return Err(Error::Dimension { expected: block, got: input.ncols() });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weights * &h;
            for c in (0..z.ncols()).step_by(block) {
                let mut col = z.column_mut(c);
                col += &l.bias;
            }
            inputs.push(h);
            if i < last {
                dual_tanh(&mut z, block);
            }
            h = z;
        }
        Ok(BatchTrace { block, inputs, output: h })
    }

    /// Accumulates into `grad` the parameter gradient of `⟨cotangent, trace.output⟩`,
    /// where the pairing runs over point and tangent columns alike.
    pub fn backward_batch(&self, trace: &BatchTrace, cotangent: &DMatrix<f64>, grad: &mut Mlp) {
        let block = trace.block;
        let mut g = cotangent.clone();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let input = &trace.inputs[i];
            grad.layers[i].weights.gemm(1.0, &g, &input.transpose(), 1.0);
            for c in (0..g.ncols()).step_by(block) {
                grad.layers[i].bias += g.column(c);
            }
            if i == 0 {
                break;
            }
            let adj_h = l.weights.tr_mul(&g);
            // `input` is the post-activation of the previous hidden layer.
            g = dual_tanh_backward(input, &adj_h, block);
        }
    }

    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights * scale;
            a.bias += &b.bias * scale;
        }
    }
}

/// In place: point columns get `tanh`, tangent columns get `(1 − tanh²) ⊙ ·`.
fn dual_tanh(z: &mut DMatrix<f64>, block: usize) {
    let rows = z.nrows();
    for c0 in (0..z.ncols()).step_by(block) {
        let mut slope = vec![0.0; rows];
        for r in 0..rows {
            let h = z[(r, c0)].tanh();
            z[(r, c0)] = h;
            slope[r] = 1.0 - h * h;
        }
        for c in c0 + 1..c0 + block {
            let mut col = z.column_mut(c);
            for r in 0..rows {
                col[r] *= slope[r];
            }
        }
    }
}

/// Adjoint of [`dual_tanh`] given its output `h` and the output adjoint.
///
/// With `s = 1 − h₀²`: `z̄₀ = s ⊙ ḡ₀ − 2 h₀ ⊙ Σ_j ḡ_j ⊙ h_j` and `z̄_j = s ⊙ ḡ_j`, using
/// `s ⊙ z_j = h_j`.
fn dual_tanh_backward(h: &DMatrix<f64>, adj: &DMatrix<f64>, block: usize) -> DMatrix<f64> {
    let rows = h.nrows();
    let mut out = DMatrix::zeros(rows, h.ncols());
    for c0 in (0..h.ncols()).step_by(block) {
        for r in 0..rows {
            let h0 = h[(r, c0)];
            let s = 1.0 - h0 * h0;
            let mut acc = 0.0;
            for c in c0 + 1..c0 + block {
                acc += adj[(r, c)] * h[(r, c)];
                out[(r, c)] = s * adj[(r, c)];
            }
            out[(r, c0)] = s * adj[(r, c0)] - 2.0 * h0 * acc;
        }
    }
    out
}
