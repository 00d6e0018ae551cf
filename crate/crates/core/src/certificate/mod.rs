//! Certificate conditions at a sample (R1, R2, C1, C2, C3), the sampled positive-definiteness
//! penalty, the training loss and its gradient, training and verification.

mod assemble;
mod batch;
mod train;
mod verify;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{sample_rotation, uniform, EulerBox, LieState};
use crate::nn::Hyper;
use crate::system::{ControlInput, Disturbance};

pub use assemble::{
    assemble_a_script, assemble_c_conditions, assemble_r1, assemble_r2, closed_loop_fields, residuals, sample_loss,
    CConditions, CertificateResiduals, ClosedLoop,
};
pub use batch::loss_and_gradient;
pub use train::{train, train_with, write_log, EpochLog, TrainOutcome};
pub use verify::{verify, verify_samples, ViolationCounts, VerifyReport, WorstValues, VIOLATION_TOL};

/// Which loss to train: the robust (disturbance-aware) one or the plain contraction one,
/// which treats `B_w` as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Rccm,
    Ccm,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rccm" => Ok(Mode::Rccm),
            "ccm" => Ok(Mode::Ccm),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected rccm or ccm)"))),
        }
    }
}

/// One training point `(x, x*, u*, w)` in ambient coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub x: DVector<f64>,
    pub x_star: DVector<f64>,
    pub u_star: DVector<f64>,
    pub w: DVector<f64>,
}

impl TrainSample {
    pub fn quadrotor(x: &LieState, x_star: &LieState, u_star: &ControlInput, w: &Disturbance) -> Self {
        Self { x: x.to_dvector(), x_star: x_star.to_dvector(), u_star: u_star.to_dvector(), w: w.to_dvector() }
    }
}

/// Per-axis uniform sampling boxes for quadrotor training and verification samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingBoxes {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub euler: EulerBox,
    pub thrust_over_m: [f64; 2],
    pub omega_b: [f64; 2],
    pub f_d_over_m: [f64; 2],
    pub omega_d: [f64; 2],
}

impl Default for SamplingBoxes {
    fn default() -> Self {
        Self {
            position: [-5.0, 5.0],
            velocity: [-5.0, 5.0],
            euler: EulerBox::default(),
            thrust_over_m: [4.0, 16.0],
            omega_b: [-2.0, 2.0],
            f_d_over_m: [-1.0, 1.0],
            omega_d: [-0.5, 0.5],
        }
    }
}

impl SamplingBoxes {
    pub fn validate(&self) -> Result<()> {
        let e = &self.euler;
        for (name, r) in [
            ("position", self.position),
            ("velocity", self.velocity),
            ("euler.roll", e.roll),
            ("euler.pitch", e.pitch),
            ("euler.yaw", e.yaw),
            ("thrust_over_m", self.thrust_over_m),
            ("omega_b", self.omega_b),
            ("f_d_over_m", self.f_d_over_m),
            ("omega_d", self.omega_d),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::Config(format!("sampling box `{name}` is empty or not finite")));
            }
        }
        Ok(())
    }

    fn vec3<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> Vector3<f64> {
        Vector3::new(uniform(rng, r), uniform(rng, r), uniform(rng, r))
    }

    fn state<R: Rng + ?Sized>(&self, rng: &mut R) -> LieState {
        let p = Self::vec3(rng, self.position);
        let v = Self::vec3(rng, self.velocity);
        LieState::new(p, v, sample_rotation(rng, &self.euler))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrainSample {
        let x = self.state(rng);
        let x_star = self.state(rng);
        let u = ControlInput::new(uniform(rng, self.thrust_over_m), Self::vec3(rng, self.omega_b));
        let w = Disturbance::new(Self::vec3(rng, self.f_d_over_m), Self::vec3(rng, self.omega_d));
        TrainSample::quadrotor(&x, &x_star, &u, &w)
    }
}

/// Training settings. Field names double as the JSON config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lpd_directions: usize,
    pub seed: u64,
    pub mode: Mode,
    pub hidden: Vec<usize>,
    pub h_k: usize,
    pub hyper: Hyper,
    pub sampling: SamplingBoxes,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_samples: 131_072,
            epochs: 30,
            batch_size: 1024,
            learning_rate: 1e-3,
            lpd_directions: 64,
            seed: 0,
            mode: Mode::Rccm,
            hidden: vec![128, 128],
            h_k: 45,
            hyper: Hyper::default(),
            sampling: SamplingBoxes::default(),
        }
    }
}

impl TrainConfig {
    /// Default settings at `n_samples = 16384`.
    pub fn desk() -> Self {
        Self { n_samples: 16_384, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_samples == 0 || self.epochs == 0 || self.batch_size == 0 || self.lpd_directions == 0 {
            return bad("n_samples, epochs, batch_size and lpd_directions must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.h_k == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        let h = &self.hyper;
        if !(h.m_lower > 0.0 && h.m_upper > 0.0 && h.lambda > 0.0 && h.alpha_floor >= 0.0) {
            return bad("hyperparameters must be positive");
        }
        self.sampling.validate()
    }
}

/// `N` i.i.d. samples drawn uniformly from the configured boxes.
pub fn sample_training_set<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Vec<TrainSample> {
    (0..config.n_samples).map(|_| config.sampling.sample(rng)).collect()
}

/// Unit directions (columns) used by the penalty for each condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Directions {
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub bound: DMatrix<f64>,
}

/// `k` directions uniform on the unit sphere of dimension `dim` (columns).
pub fn sphere_directions<R: Rng + ?Sized>(rng: &mut R, dim: usize, k: usize) -> DMatrix<f64> {
    let mut p = DMatrix::from_fn(dim, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut c in p.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    p
}

impl Directions {
    /// Directions for a problem with tangent dim `q`, disturbance dim `p` and `q_perp`
    /// annihilator columns. In CCM mode R1 is the `q × q` contraction block and R2 is unused.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, q: usize, p: usize, q_perp: usize, k: usize, mode: Mode) -> Self {
        let r1_dim = match mode {
            Mode::Rccm => q + p,
            Mode::Ccm => q,
        };
        Self {
            r1: sphere_directions(rng, r1_dim, k),
            r2: sphere_directions(rng, q + p, k),
            c1: sphere_directions(rng, q_perp, k),
            bound: sphere_directions(rng, q, k),
        }
    }
}

/// `L_PD(A) = (1/K) Σ max(0, −pᵀ A p)` over the columns of `dirs`.
pub fn lpd_penalty(a: &DMatrix<f64>, dirs: &DMatrix<f64>) -> f64 {
    lpd_with_adjoint(a, dirs).0
}

/// Penalty value and its gradient with respect to `A`: `−(1/K) Σ_{pᵀAp < 0} p pᵀ`.
pub(crate) fn lpd_with_adjoint(a: &DMatrix<f64>, dirs: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let k = dirs.ncols();
    let d = a.nrows();
    let mut adj = DMatrix::zeros(d, d);
    if k == 0 || d == 0 {
        return (0.0, adj);
    }
    let ap = a * dirs;
    let mut value = 0.0;
    let scale = 1.0 / k as f64;
    for j in 0..k {
        let pj = dirs.column(j);
        let v = pj.dot(&ap.column(j));
        if v < 0.0 {
            value -= v;
            adj.ger(-scale, &pj, &pj, 1.0);
        } else if v.is_nan() {
            value = f64::NAN;
        }
    }
    (value * scale, adj)
}

/// The named scalar terms of the per-sample loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub lpd_r1: f64,
    pub lpd_r2: f64,
    pub lpd_c1: f64,
    pub frob_c2: f64,
    pub frob_c3: f64,
    pub lpd_bound: f64,
    pub relu_alpha: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 7] = ["lpd_R1", "lpd_R2", "lpd_C1", "frob_C2", "frob_C3", "lpd_bound", "relu_alpha"];

    pub fn as_array(&self) -> [f64; 7] {
        [self.lpd_r1, self.lpd_r2, self.lpd_c1, self.frob_c2, self.frob_c3, self.lpd_bound, self.relu_alpha]
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.as_array().iter().position(|v| !v.is_finite()).map(|i| Self::NAMES[i])
    }

    pub fn add(&mut self, o: &LossTerms) {
        self.lpd_r1 += o.lpd_r1;
        self.lpd_r2 += o.lpd_r2;
        self.lpd_c1 += o.lpd_c1;
        self.frob_c2 += o.frob_c2;
        self.frob_c3 += o.frob_c3;
        self.lpd_bound += o.lpd_bound;
        self.relu_alpha += o.relu_alpha;
    }

    pub fn scaled(&self, s: f64) -> LossTerms {
        let a = self.as_array().map(|v| v * s);
        LossTerms {
            lpd_r1: a[0],
            lpd_r2: a[1],
            lpd_c1: a[2],
            frob_c2: a[3],
            frob_c3: a[4],
            lpd_bound: a[5],
            relu_alpha: a[6],
        }
    }
}
