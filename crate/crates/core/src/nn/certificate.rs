use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{DualVector, Mlp};
use crate::error::{Error, Result};
use crate::system::{ControlAffineModel, Dims};

/// Frozen training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    /// Lower metric bound `m̲`: the loss pushes `W ⪯ m̲⁻¹ I`.
    pub m_lower: f64,
    /// Upper metric bound `m̄`: `W ⪰ m̄⁻¹ I` by construction.
    pub m_upper: f64,
    /// Contraction rate.
    pub lambda: f64,
    /// Gains below this value are not penalized.
    pub alpha_floor: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { m_lower: 0.1, m_upper: 10.0, lambda: 0.5, alpha_floor: 0.7 }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp()).ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Dual metric network `Θ(x)`, controller networks `K₁(x, x*)`, `K₂(x, x*)` and the
/// scalars behind `α = softplus(θ_α)` and `μ = softplus(θ_μ)`.
///
/// Matrix-valued networks emit their entries row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralCertificate {
    pub theta_w: Mlp,
    pub theta_k1: Mlp,
    pub theta_k2: Mlp,
    pub theta_alpha: f64,
    pub theta_mu: f64,
    pub hyper: Hyper,
}

impl NeuralCertificate {
    /// Fresh certificate with `hidden` tanh layers in every network and inner controller
    /// width `h_k`; `α₀ = 2`, `μ₀ = 1`.
    pub fn new<R: Rng + ?Sized>(dims: Dims, h_k: usize, hidden: &[usize], hyper: Hyper, rng: &mut R) -> Self {
        let widths = |inp: usize, out: usize| -> Vec<usize> {
            std::iter::once(inp).chain(hidden.iter().copied()).chain(std::iter::once(out)).collect()
        };
        Self {
            theta_w: Mlp::new(&widths(dims.n, dims.q * dims.q), rng),
            theta_k1: Mlp::new(&widths(2 * dims.n, dims.m * h_k), rng),
            theta_k2: Mlp::new(&widths(2 * dims.n, h_k * dims.q), rng),
            theta_alpha: softplus_inv(2.0),
            theta_mu: softplus_inv(1.0),
            hyper,
        }
    }

    /// Checks that the three networks fit together and returns `(n, q, m, h_k)`.
    pub fn shape(&self) -> Result<(usize, usize, usize, usize)> {
        let n = self.theta_w.input_dim();
        let q2 = self.theta_w.output_dim();
        let q = (q2 as f64).sqrt().round() as usize;
        let bad = |msg: &str| Err(Error::Weights(msg.into()));
        if q * q != q2 || q == 0 {
            return bad("theta_w output is not a square count");
        }
        if self.theta_k1.input_dim() != 2 * n || self.theta_k2.input_dim() != 2 * n {
            return bad("controller networks must take (x, x*)");
        }
        let k2 = self.theta_k2.output_dim();
        if !k2.is_multiple_of(q) || k2 == 0 {
            return bad("theta_k2 output is not a multiple of q");
        }
        let h = k2 / q;
        let k1 = self.theta_k1.output_dim();
        if !k1.is_multiple_of(h) || k1 == 0 {
            return bad("theta_k1 output is not a multiple of h_k");
        }
        if !(self.theta_alpha.is_finite() && self.theta_mu.is_finite()) {
            return bad("non-finite scalar parameter");
        }
        Ok((n, q, k1 / h, h))
    }

    pub fn q(&self) -> usize {
        (self.theta_w.output_dim() as f64).sqrt().round() as usize
    }

    pub fn h_k(&self) -> usize {
        self.theta_k2.output_dim() / self.q()
    }

    pub fn m(&self) -> usize {
        self.theta_k1.output_dim() / self.h_k()
    }

    pub fn alpha(&self) -> f64 {
        softplus(self.theta_alpha)
    }

    pub fn mu(&self) -> f64 {
        softplus(self.theta_mu)
    }

    pub fn num_params(&self) -> usize {
        self.theta_w.num_params() + self.theta_k1.num_params() + self.theta_k2.num_params() + 2
    }

    /// Order: `Θ` network, `K₁` network, `K₂` network, `θ_α`, `θ_μ`.
    pub fn write_params(&self, out: &mut [f64]) {
        let (a, b) = (self.theta_w.num_params(), self.theta_k1.num_params());
        let c = self.theta_k2.num_params();
        self.theta_w.write_params(&mut out[..a]);
        self.theta_k1.write_params(&mut out[a..a + b]);
        self.theta_k2.write_params(&mut out[a + b..a + b + c]);
        out[a + b + c] = self.theta_alpha;
        out[a + b + c + 1] = self.theta_mu;
    }

    pub fn read_params(&mut self, src: &[f64]) {
        let (a, b) = (self.theta_w.num_params(), self.theta_k1.num_params());
        let c = self.theta_k2.num_params();
        self.theta_w.read_params(&src[..a]);
        self.theta_k1.read_params(&src[a..a + b]);
        self.theta_k2.read_params(&src[a + b..a + b + c]);
        self.theta_alpha = src[a + b + c];
        self.theta_mu = src[a + b + c + 1];
    }

    pub fn theta(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let q = self.q();
        Ok(DMatrix::from_row_slice(q, q, self.theta_w.forward(x.as_slice())?.as_slice()))
    }

    /// `W(x) = Θᵀ Θ + m̄⁻¹ I`.
    pub fn eval_dual_metric(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let t = self.theta(x)?;
        Ok(gram_plus_floor(&t, 1.0 / self.hyper.m_upper))
    }

    /// `W(x)` and its directional derivative `∂_d W = (∂_d Θ)ᵀ Θ + Θᵀ ∂_d Θ`.
    pub fn eval_dual_metric_directional(
        &self,
        x: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let q = self.q();
        let out = self.theta_w.forward_dual(&DualVector::new(x.clone(), d.clone())?)?;
        let t = DMatrix::from_row_slice(q, q, out.value.as_slice());
        let dt = DMatrix::from_row_slice(q, q, out.tangent.as_slice());
        let dw = dt.transpose() * &t + t.transpose() * &dt;
        Ok((gram_plus_floor(&t, 1.0 / self.hyper.m_upper), dw))
    }

    /// `M(x) = W(x)⁻¹` by Cholesky.
    pub fn eval_metric(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        spd_inverse(&self.eval_dual_metric(x)?)
    }

    /// Feedback correction `k(x, x*) = K₁ tanh(K₂ ε(x, x*))`.
    pub fn controller_correction<S: ControlAffineModel + ?Sized>(
        &self,
        model: &S,
        x: &DVector<f64>,
        x_star: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (q, m, h) = (self.q(), self.m(), self.h_k());
        let input = concat(x, x_star);
        let k1 = DMatrix::from_row_slice(m, h, self.theta_k1.forward(input.as_slice())?.as_slice());
        let k2 = DMatrix::from_row_slice(h, q, self.theta_k2.forward(input.as_slice())?.as_slice());
        let e = model.error(x, x_star);
        Ok(k1 * (k2 * e).map(f64::tanh))
    }

    /// `u = u* + k(x, x*)`.
    pub fn eval_controller<S: ControlAffineModel + ?Sized>(
        &self,
        model: &S,
        x: &DVector<f64>,
        x_star: &DVector<f64>,
        u_star: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        if x == x_star {
            return Ok(u_star.clone());
        }
        Ok(u_star + self.controller_correction(model, x, x_star)?)
    }

    /// Ambient Jacobian `∂k/∂x` (m × n) with `x*` fixed.
    pub fn controller_jacobian<S: ControlAffineModel + ?Sized>(
        &self,
        model: &S,
        x: &DVector<f64>,
        x_star: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let n = x.len();
        self.controller_directional(model, x, x_star, &DMatrix::identity(n, n))
    }

    /// `∂k/∂x · dirs` for the ambient directions in the columns of `dirs`.
    pub fn controller_directional<S: ControlAffineModel + ?Sized>(
        &self,
        model: &S,
        x: &DVector<f64>,
        x_star: &DVector<f64>,
        dirs: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let (q, m, h) = (self.q(), self.m(), self.h_k());
        let n = x.len();
        let nd = dirs.ncols();
        let mut input = DMatrix::zeros(2 * n, nd + 1);
        input.column_mut(0).copy_from(&concat(x, x_star));
        input.view_mut((0, 1), (n, nd)).copy_from(dirs);
        let o1 = self.theta_k1.forward_batch(&input, nd + 1)?.output;
        let o2 = self.theta_k2.forward_batch(&input, nd + 1)?.output;
        let k1 = DMatrix::from_row_slice(m, h, o1.column(0).as_slice());
        let k2 = DMatrix::from_row_slice(h, q, o2.column(0).as_slice());
        let e = model.error(x, x_star);
        let de = model.error_jacobian(x, x_star) * dirs;
        let t = (&k2 * &e).map(f64::tanh);
        let s = t.map(|v| 1.0 - v * v);
        let mut out = DMatrix::zeros(m, nd);
        for j in 0..nd {
            let dk1 = DMatrix::from_row_slice(m, h, o1.column(j + 1).as_slice());
            let dk2 = DMatrix::from_row_slice(h, q, o2.column(j + 1).as_slice());
            let g = dk2 * &e + &k2 * de.column(j);
            out.set_column(j, &(dk1 * &t + &k1 * s.component_mul(&g)));
        }
        Ok(out)
    }
}

pub(crate) fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

pub(crate) fn gram_plus_floor(t: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let mut w = t.tr_mul(t);
    for i in 0..w.nrows() {
        w[(i, i)] += floor;
    }
    w
}

pub(crate) fn spd_inverse(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = w
        .clone()
        .cholesky()
        .ok_or(Error::Weights("dual metric is not positive definite".into()))?
        .inverse();
    // Exact symmetry keeps downstream assembled matrices symmetric.
    Ok((&inv + inv.transpose()) * 0.5)
}
