//! Closed-loop simulation of the quadrotor with RK4 on the manifold, a geometric baseline
//! controller, a translational disturbance estimator and tube metrics.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{retract_rotation, rotation_error, LieState, Rotation};
use crate::nn::NeuralCertificate;
use crate::planner::{attitude_from_thrust, flat_to_nominal, spiral_reference, NominalPoint};
use crate::system::{ControlAffineModel, ControlInput, Disturbance, Quadrotor};

/// Upper bound on `‖w(t)‖` for [`DisturbanceModel::Injected`].
pub const W_BAR: f64 = 1.0;

/// Force disturbance `f_d(t)` in N of the injected disturbance.
pub fn disturbance_force(t: f64) -> Vector3<f64> {
    Vector3::new(0.6, 0.7, 0.3) * (0.8 + 0.2 * (0.2 * std::f64::consts::PI * t).sin())
}

/// Body-rate disturbance `ω_d(t)` of the injected disturbance.
pub fn disturbance_rate(t: f64) -> Vector3<f64> {
    Vector3::new(0.1, 0.1, 0.2) * (0.5 + 0.5 * (2.0 * std::f64::consts::PI * t).sin())
}

/// The injected disturbance as `w = [f_d/m; ω_d]`.
pub fn disturbance_true(t: f64, mass: f64) -> Disturbance {
    Disturbance::new(disturbance_force(t) / mass, disturbance_rate(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceModel {
    /// Time-varying force and body-rate disturbance with `sup ‖w‖ ≈ 1`.
    Injected,
    None,
    /// Constant force (N) and body-rate disturbance.
    Constant { f_d: [f64; 3], omega_d: [f64; 3] },
}

impl DisturbanceModel {
    /// Returns `(f_d in N, ω_d)` at time `t`.
    pub fn eval(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        match self {
            Self::Injected => (disturbance_force(t), disturbance_rate(t)),
            Self::None => (Vector3::zeros(), Vector3::zeros()),
            Self::Constant { f_d, omega_d } => (Vector3::from(*f_d), Vector3::from(*omega_d)),
        }
    }

    pub fn disturbance(&self, t: f64, mass: f64) -> Disturbance {
        let (f, w) = self.eval(t);
        Disturbance::new(f / mass, w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricGains {
    pub k_p: f64,
    pub k_v: f64,
    pub k_r: f64,
}

impl Default for GeometricGains {
    fn default() -> Self {
        Self { k_p: 0.5, k_v: 1.0, k_r: 2.4 }
    }
}

/// Yaw of a body frame whose `x` axis is perpendicular to `y_C(ψ)`.
fn yaw_of(r: &Matrix3<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Position/attitude geometric tracking controller with body-rate output.
pub fn geometric_controller(
    x: &LieState,
    nominal: &NominalPoint,
    gains: &GeometricGains,
) -> Result<ControlInput> {
    let xs = &nominal.x_star;
    let r_star = xs.r.matrix();
    let a_des = -(x.p - xs.p) * gains.k_p - (x.v - xs.v) * gains.k_v
        + r_star.column(2) * nominal.u_star.thrust_over_m;
    let n = a_des.norm();
    if n <= 0.1 {
        return Err(Error::FreeFallSingularity(n));
    }
    let thrust = a_des.dot(&r_star.column(2));
    let (r_des, _) = attitude_from_thrust(&(a_des / n), yaw_of(r_star))?;
    let r = x.r.matrix();
    let e_r = rotation_error(r, &r_des);
    let omega = r.transpose() * r_star * nominal.u_star.omega_b - e_r * gains.k_r;
    Ok(ControlInput::new(thrust, omega))
}

/// Classical RK4 step of `ẏ = f(t, y)`.
fn rk4(
    y: &DVector<f64>,
    t: f64,
    dt: f64,
    mut f: impl FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
) -> Result<DVector<f64>> {
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * dt, &(y + &k1 * (0.5 * dt)))?;
    let k3 = f(t + 0.5 * dt, &(y + &k2 * (0.5 * dt)))?;
    let k4 = f(t + dt, &(y + &k3 * dt))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

fn retract_state(y: &[f64]) -> Result<LieState> {
    let s = LieState::from_ambient_unchecked(&y[..15]);
    Ok(LieState::new(s.p, s.v, retract_rotation(s.r.matrix())?))
}

/// One RK4 step on the ambient coordinates with `u` and `w` held, then retraction of `R`.
pub fn rk4_step<S: ControlAffineModel + ?Sized>(
    model: &S,
    x: &LieState,
    u: &ControlInput,
    w: &Disturbance,
    dt: f64,
) -> Result<LieState> {
    let (u, w) = (u.to_dvector(), w.to_dvector());
    let y = rk4(&x.to_dvector(), 0.0, dt, |_, y| Ok(model.vector_field(y, &u, &w)))?;
    retract_state(y.as_slice())
}

/// Estimator state: `ξ` with `f̂_d = ξ + λ_d m v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UdeState {
    pub xi: Vector3<f64>,
    pub f_d_hat: Vector3<f64>,
}

impl UdeState {
    /// Zero initial estimate at velocity `v`.
    pub fn new(v: &Vector3<f64>, lambda_d: f64, mass: f64) -> Self {
        Self { xi: -v * (lambda_d * mass), f_d_hat: Vector3::zeros() }
    }
}

fn ude_rate(model: &Quadrotor, xi: &Vector3<f64>, y: &[f64], thrust_over_m: f64, lambda_d: f64) -> Vector3<f64> {
    let m = model.mass;
    let v = Vector3::new(y[3], y[4], y[5]);
    let r_e3 = Vector3::new(y[12], y[13], y[14]);
    -(xi + v * (lambda_d * m)) * lambda_d - (model.gravity * m + r_e3 * (thrust_over_m * m)) * lambda_d
}

/// Joint RK4 step of the plant and the estimator (shared stage values). The control law
/// `control(t, x, f̂_d)` and the disturbance are evaluated at every stage, so the step
/// integrates the continuous closed loop. Returns the retracted state and new estimate.
#[allow(clippy::too_many_arguments)]
pub fn rk4_step_ude(
    model: &Quadrotor,
    x: &LieState,
    ude: &UdeState,
    mut control: impl FnMut(f64, &LieState, &Vector3<f64>) -> Result<ControlInput>,
    w: impl Fn(f64) -> Disturbance,
    t: f64,
    dt: f64,
    lambda_d: f64,
) -> Result<(LieState, UdeState)> {
    let m = model.mass;
    let mut y0 = DVector::zeros(18);
    y0.rows_mut(0, 15).copy_from(&x.to_dvector());
    y0.rows_mut(15, 3).copy_from(&ude.xi);
    let y = rk4(&y0, t, dt, |s, y| {
        let xs = y.rows(0, 15).into_owned();
        let state = LieState::from_ambient_unchecked(xs.as_slice());
        let xi = Vector3::new(y[15], y[16], y[17]);
        let u = control(s, &state, &(xi + state.v * (lambda_d * m)))?;
        let mut d = DVector::zeros(18);
        d.rows_mut(0, 15).copy_from(&model.vector_field(&xs, &u.to_dvector(), &w(s).to_dvector()));
        d.rows_mut(15, 3).copy_from(&ude_rate(model, &xi, y.as_slice(), u.thrust_over_m, lambda_d));
        Ok(d)
    })?;
    let x1 = retract_state(y.as_slice())?;
    let xi = Vector3::new(y[15], y[16], y[17]);
    let f_d_hat = xi + x1.v * (lambda_d * m);
    Ok((x1, UdeState { xi, f_d_hat }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Rccm,
    Ccm,
    Geometric,
    RccmUde,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::Rccm => "rccm",
            Case::Ccm => "ccm",
            Case::Geometric => "geometric",
            Case::RccmUde => "rccm_ude",
        }
    }

    pub fn needs_weights(self) -> bool {
        self != Case::Geometric
    }
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rccm" => Ok(Case::Rccm),
            "ccm" => Ok(Case::Ccm),
            "geometric" => Ok(Case::Geometric),
            "rccm_ude" => Ok(Case::RccmUde),
            _ => Err(Error::Config(format!("unknown case `{s}` (rccm, ccm, geometric, rccm_ude)"))),
        }
    }
}

/// Initial deviation from the nominal start state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialOffset {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Right-multiplied rotation `exp(hat(φ))`.
    pub rotation: [f64; 3],
}

impl Default for InitialOffset {
    fn default() -> Self {
        Self { position: [0.5, -0.5, 0.3], velocity: [0.0; 3], rotation: [0.2, 0.0, 0.0] }
    }
}

impl InitialOffset {
    pub fn zero() -> Self {
        Self { position: [0.0; 3], velocity: [0.0; 3], rotation: [0.0; 3] }
    }

    pub fn apply(&self, x: &LieState) -> LieState {
        let r = Rotation::from_matrix_unchecked(x.r.matrix() * Rotation::exp(&self.rotation.into()).matrix());
        LieState::new(x.p + Vector3::from(self.position), x.v + Vector3::from(self.velocity), r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub initial_offset: InitialOffset,
    pub case: Case,
    pub seed: u64,
    /// Certificate weights for the learned cases.
    pub weights: Option<PathBuf>,
    pub ude_lambda: f64,
    pub gains: GeometricGains,
    pub disturbance: DisturbanceModel,
    /// Samples with `t` above this are post-transient.
    pub transient: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.002,
            duration: 20.0,
            initial_offset: InitialOffset::default(),
            case: Case::Rccm,
            seed: 0,
            weights: None,
            ude_lambda: 0.5,
            gains: GeometricGains::default(),
            disturbance: DisturbanceModel::Injected,
            transient: 5.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration > self.dt && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration ({}) must exceed dt ({})", self.duration, self.dt)));
        }
        if !(self.ude_lambda > 0.0) {
            return Err(Error::Config(format!("ude_lambda must be positive, got {}", self.ude_lambda)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub x: LieState,
    pub x_star: LieState,
    pub u: ControlInput,
    pub u_star: ControlInput,
    pub w: Disturbance,
    pub w_star: Disturbance,
    /// True force disturbance in N.
    pub f_d: Vector3<f64>,
    pub f_d_hat: Vector3<f64>,
    pub z: DVector<f64>,
    pub z_star: DVector<f64>,
    pub dev: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub case: Case,
    pub records: Vec<SimRecord>,
}

/// Controller choice for [`run_case`].
#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    Learned(&'a NeuralCertificate),
    Geometric(GeometricGains),
}

/// Simulates `config.case` along the spiral reference. Learned cases need a certificate;
/// the `rccm_ude` case regenerates the nominal from the current estimate every step.
pub fn run_case(model: &Quadrotor, cert: Option<&NeuralCertificate>, config: &SimConfig) -> Result<SimTrace> {
    config.validate()?;
    let controller = match (config.case, cert) {
        (Case::Geometric, _) => Controller::Geometric(config.gains),
        (_, Some(c)) => Controller::Learned(c),
        (case, None) => {
            return Err(Error::Config(format!("case {} needs certificate weights", case.name())));
        }
    };
    let (dt, lambda, m) = (config.dt, config.ude_lambda, model.mass);
    let use_estimate = config.case == Case::RccmUde;
    let steps = config.steps();
    let nominal_at = |t: f64, fd: &Vector3<f64>, fd_dot: &Vector3<f64>| {
        if use_estimate {
            flat_to_nominal(model, &spiral_reference(t), fd, fd_dot)
        } else {
            flat_to_nominal(model, &spiral_reference(t), &Vector3::zeros(), &Vector3::zeros())
        }
    };
    let control = |t: f64, x: &LieState, nom: &NominalPoint, step: usize| -> Result<ControlInput> {
        let u = match controller {
            Controller::Geometric(g) => geometric_controller(x, nom, &g)?,
            Controller::Learned(c) => {
                let u = c.eval_controller(model, &x.to_dvector(), &nom.x_star.to_dvector(), &nom.u_star.to_dvector())?;
                ControlInput::from_slice(u.as_slice())
            }
        };
        if !u.is_finite() {
            return Err(Error::NonFiniteControl { step, t });
        }
        Ok(u)
    };
    let mut x = config.initial_offset.apply(&nominal_at(0.0, &Vector3::zeros(), &Vector3::zeros())?.x_star);
    let mut ude = UdeState::new(&x.v, lambda, m);
    let mut fd_dot = Vector3::zeros();
    let mut records = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let nom = nominal_at(t, &ude.f_d_hat, &fd_dot)?;
        let u = control(t, &x, &nom, k)?;
        let z = model.output_state(&x, &u);
        let z_star = model.output_state(&nom.x_star, &nom.u_star);
        let dev = (&z - &z_star).norm();
        let (f_d, _) = config.disturbance.eval(t);
        records.push(SimRecord {
            t,
            x,
            x_star: nom.x_star,
            u,
            u_star: nom.u_star,
            w: config.disturbance.disturbance(t, m),
            w_star: nom.w_star,
            f_d,
            f_d_hat: ude.f_d_hat,
            z,
            z_star,
            dev,
        });
        if k < steps {
            let prev = ude.f_d_hat;
            // The estimate rate for nominal regeneration is held over the step.
            let law = |s: f64, xs: &LieState, fd: &Vector3<f64>| control(s, xs, &nominal_at(s, fd, &fd_dot)?, k);
            (x, ude) = rk4_step_ude(model, &x, &ude, law, |s| config.disturbance.disturbance(s, m), t, dt, lambda)?;
            fd_dot = (ude.f_d_hat - prev) / dt;
        }
    }
    Ok(SimTrace { case: config.case, records })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeSummary {
    pub case: String,
    pub max_dev: f64,
    pub post_transient_max_dev: f64,
    pub post_transient_mean_dev: f64,
    pub bound: f64,
    pub inside_fraction: f64,
    pub transient: f64,
    pub alpha: f64,
    pub w_bar: f64,
}

/// Deviation statistics against the tube radius `α w̄`; samples with `t > transient` count
/// as post-transient. A NaN `alpha` (no certificate) leaves the tube fields NaN.
pub fn tube_metrics(trace: &SimTrace, alpha: f64, w_bar: f64, transient: f64) -> Result<TubeSummary> {
    if trace.records.is_empty() {
        return Err(Error::Config("empty trace".into()));
    }
    let bound = alpha * w_bar;
    let n = trace.records.len() as f64;
    let max_dev = trace.records.iter().map(|r| r.dev).fold(0.0, f64::max);
    let post: Vec<f64> = trace.records.iter().filter(|r| r.t > transient).map(|r| r.dev).collect();
    let (post_max, post_mean) = if post.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (post.iter().cloned().fold(0.0, f64::max), post.iter().sum::<f64>() / post.len() as f64)
    };
    Ok(TubeSummary {
        case: trace.case.name().to_string(),
        max_dev,
        post_transient_max_dev: post_max,
        post_transient_mean_dev: post_mean,
        bound,
        inside_fraction: if bound.is_nan() {
            f64::NAN
        } else {
            trace.records.iter().filter(|r| r.dev <= bound).count() as f64 / n
        },
        transient,
        alpha,
        w_bar,
    })
}

pub const TRACE_HEADER: [&str; 18] = [
    "t", "dev", "px", "py", "pz", "px_star", "py_star", "pz_star", "ft", "wx", "wy", "wz", "fd_hat_x", "fd_hat_y",
    "fd_hat_z", "fd_true_x", "fd_true_y", "fd_true_z",
];

/// Writes the trace CSV; `ft` is the commanded thrust in N.
pub fn write_trace_csv(path: &Path, trace: &SimTrace, mass: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        let mut row = vec![r.t, r.dev];
        row.extend(r.x.p.iter().chain(r.x_star.p.iter()).copied());
        row.push(r.u.thrust_over_m * mass);
        row.extend(r.u.omega_b.iter().chain(r.f_d_hat.iter()).chain(r.f_d.iter()).copied());
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
