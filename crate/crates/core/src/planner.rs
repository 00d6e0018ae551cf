//! Differential-flatness nominal trajectories for the quadrotor.
//!
//! Position and yaw (with derivatives up to jerk) map to a nominal state, thrust and body
//! rates; an estimated force disturbance is folded into the required thrust so the nominal
//! stays dynamically consistent with the estimated disturbance.

use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::manifold::{vec3_cm, LieState, Rotation};
use crate::system::{ControlAffineModel, ControlInput, Disturbance, Quadrotor};

/// Flat outputs at one instant: position and its first three derivatives, yaw and yaw rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatOutput {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub j: Vector3<f64>,
    pub psi: f64,
    pub psi_dot: f64,
}

impl FlatOutput {
    pub fn hover(p: Vector3<f64>) -> Self {
        Self { p, v: Vector3::zeros(), a: Vector3::zeros(), j: Vector3::zeros(), psi: 0.0, psi_dot: 0.0 }
    }
}

/// A nominal solution `(x*, u*, w*)` of the dynamics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NominalPoint {
    pub x_star: LieState,
    pub u_star: ControlInput,
    pub w_star: Disturbance,
}

/// `p*(t) = [0.5 t, 3 cos 1.5t, 3 sin 1.5t]`, `ψ* = 0`.
pub fn spiral_reference(t: f64) -> FlatOutput {
    let (s, c) = (1.5 * t).sin_cos();
    let w = 1.5;
    FlatOutput {
        p: Vector3::new(0.5 * t, 3.0 * c, 3.0 * s),
        v: Vector3::new(0.5, -3.0 * w * s, 3.0 * w * c),
        a: Vector3::new(0.0, -3.0 * w * w * c, -3.0 * w * w * s),
        j: Vector3::new(0.0, 3.0 * w * w * w * s, -3.0 * w * w * w * c),
        psi: 0.0,
        psi_dot: 0.0,
    }
}

/// Thrust direction `z` and yaw `ψ` to a body frame: `x_B ∝ y_C × z_B`, `y_B = z_B × x_B`
/// with `y_C = [−sin ψ, cos ψ, 0]`. Also returns `‖y_C × z_B‖`.
pub fn attitude_from_thrust(z_b: &Vector3<f64>, psi: f64) -> Result<(Matrix3<f64>, f64)> {
    let y_c = Vector3::new(-psi.sin(), psi.cos(), 0.0);
    let cross = y_c.cross(z_b);
    let n = cross.norm();
    if n < 1e-6 {
        return Err(Error::ThrustSingularity(n));
    }
    let x_b = cross / n;
    let y_b = z_b.cross(&x_b);
    Ok((Matrix3::from_columns(&[x_b, y_b, *z_b]), n))
}

/// Nominal point for the flat output `fo`, force-disturbance estimate `f_d_hat` (N) and its
/// rate. `f* = m (p̈* − g) − f̂_d` must exceed 0.1 N in norm.
pub fn flat_to_nominal(
    model: &Quadrotor,
    fo: &FlatOutput,
    f_d_hat: &Vector3<f64>,
    f_d_hat_dot: &Vector3<f64>,
) -> Result<NominalPoint> {
    let m = model.mass;
    let f = (fo.a - model.gravity) * m - f_d_hat;
    let f_norm = f.norm();
    if f_norm <= 0.1 {
        return Err(Error::ThrustSingularity(f_norm));
    }
    let z_b = f / f_norm;
    let (r, denom) = attitude_from_thrust(&z_b, fo.psi)?;
    let (x_b, y_b) = (r.column(0).into_owned(), r.column(1).into_owned());
    // Mass-normalized jerk of the thrust vector and the thrust acceleration c.
    let j = (fo.j * m - f_d_hat_dot) / m;
    let c = f_norm / m;
    let wx = -y_b.dot(&j) / c;
    let wy = x_b.dot(&j) / c;
    let x_c = Vector3::new(fo.psi.cos(), fo.psi.sin(), 0.0);
    let y_c = Vector3::new(-fo.psi.sin(), fo.psi.cos(), 0.0);
    let wz = (fo.psi_dot * x_c.dot(&x_b) + wy * y_c.dot(&z_b)) / denom.max(1e-6);
    Ok(NominalPoint {
        x_star: LieState::new(fo.p, fo.v, Rotation::from_matrix_unchecked(r)),
        u_star: ControlInput::new(c, Vector3::new(wx, wy, wz)),
        w_star: Disturbance::new(f_d_hat / m, Vector3::zeros()),
    })
}

/// Centered finite-difference derivative of a uniformly sampled series (one-sided at the ends).
pub fn series_derivative(series: &[Vector3<f64>], dt: f64) -> Vec<Vector3<f64>> {
    let n = series.len();
    (0..n)
        .map(|k| match n {
            0 | 1 => Vector3::zeros(),
            _ if k == 0 => (series[1] - series[0]) / dt,
            _ if k == n - 1 => (series[n - 1] - series[n - 2]) / dt,
            _ => (series[k + 1] - series[k - 1]) / (2.0 * dt),
        })
        .collect()
}

/// First-order low-pass with time constant `tau`, run forward over the series.
pub fn low_pass(series: &[Vector3<f64>], dt: f64, tau: f64) -> Vec<Vector3<f64>> {
    let a = dt / (tau + dt);
    let mut out = Vec::with_capacity(series.len());
    let mut y = series.first().copied().unwrap_or_else(Vector3::zeros);
    for s in series {
        y += (s - y) * a;
        out.push(y);
    }
    out
}

/// Uniform time grid `t0, t0 + dt, …` with `n` points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    /// Grid covering `[t0, t1]`; `t1 − t0` should be a multiple of `dt`.
    pub fn span(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if !(t1 > t0) {
            return Err(Error::Config(format!("t1 ({t1}) must exceed t0 ({t0})")));
        }
        let n = ((t1 - t0) / dt + 1e-9).floor() as usize + 1;
        Ok(Self { t0, dt, n })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// Pointwise [`flat_to_nominal`] over a grid. With an `f_d_hat` series (one entry per grid
/// point) its rate is finite-differenced and optionally low-passed with time constant
/// `smoothing`.
pub fn nominal_trajectory(
    model: &Quadrotor,
    flat: impl Fn(f64) -> FlatOutput,
    grid: &TimeGrid,
    f_d_hat: Option<&[Vector3<f64>]>,
    smoothing: Option<f64>,
) -> Result<Vec<NominalPoint>> {
    let rates = match f_d_hat {
        Some(s) => {
            if s.len() != grid.n {
                return Err(Error::Dimension { expected: grid.n, got: s.len() });
            }
            let d = series_derivative(s, grid.dt);
            match smoothing {
                Some(tau) => low_pass(&d, grid.dt, tau),
                None => d,
            }
        }
        None => vec![Vector3::zeros(); grid.n],
    };
    (0..grid.n)
        .map(|k| {
            let fd = f_d_hat.map_or_else(Vector3::zeros, |s| s[k]);
            flat_to_nominal(model, &flat(grid.time(k)), &fd, &rates[k])
        })
        .collect()
}

/// Five-point finite-difference weights for the first derivative at offset `at` (0..5) of
/// an equispaced stencil with unit spacing.
fn stencil_weights(at: usize) -> [f64; 5] {
    match at {
        0 => [-25.0, 48.0, -36.0, 16.0, -3.0],
        1 => [-3.0, -10.0, 18.0, -6.0, 1.0],
        2 => [1.0, -8.0, 0.0, 8.0, -1.0],
        3 => [-1.0, 6.0, -18.0, 10.0, 3.0],
        _ => [3.0, -16.0, 36.0, -48.0, 25.0],
    }
    .map(|w| w / 12.0)
}

/// `‖ẋ*_fd − (f + B u* + B_w w*)‖_∞` at every grid point, with `ẋ*` from fourth-order
/// finite differences of the ambient nominal states. Needs at least five points.
pub fn consistency_residuals(model: &Quadrotor, points: &[NominalPoint], dt: f64) -> Result<Vec<f64>> {
    let n = points.len();
    if n < 5 {
        return Err(Error::Dimension { expected: 5, got: n });
    }
    let xs: Vec<DVector<f64>> = points.iter().map(|p| p.x_star.to_dvector()).collect();
    Ok((0..n)
        .map(|k| {
            let start = k.saturating_sub(2).min(n - 5);
            let w = stencil_weights(k - start);
            let mut xd = DVector::zeros(15);
            for (i, wi) in w.iter().enumerate() {
                xd += &xs[start + i] * (*wi / dt);
            }
            let p = &points[k];
            let field = model.vector_field(&xs[k], &p.u_star.to_dvector(), &p.w_star.to_dvector());
            (xd - field).amax()
        })
        .collect())
}

pub const TRAJECTORY_HEADER: [&str; 28] = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "r11", "r21", "r31", "r12", "r22", "r32", "r13", "r23", "r33",
    "ft_over_m", "wx", "wy", "wz", "wstar1", "wstar2", "wstar3", "wstar4", "wstar5", "wstar6", "", "",
];

/// Writes the nominal trajectory CSV (`R` entries column-major). With `residuals`, a final
/// `residual` column is appended.
pub fn write_trajectory_csv(
    path: &Path,
    grid: &TimeGrid,
    points: &[NominalPoint],
    residuals: Option<&[f64]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = TRAJECTORY_HEADER[..26].to_vec();
    if residuals.is_some() {
        header.push("residual");
    }
    w.write_record(&header)?;
    for (k, p) in points.iter().enumerate() {
        let x = &p.x_star;
        let mut row = vec![grid.time(k)];
        row.extend(x.p.iter().chain(x.v.iter()).copied());
        row.extend(vec3_cm(x.r.matrix()).iter().copied());
        row.push(p.u_star.thrust_over_m);
        row.extend(p.u_star.omega_b.iter().copied());
        row.extend(p.w_star.to_dvector().iter().copied());
        if let Some(r) = residuals {
            row.push(r[k]);
        }
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
