//! Control-affine models `ẋ = f(x) + B(x)u + B_w(x)w`, `z = g(x, u)` together with the
//! intrinsic factors `B = S E`, `B_w = S E_w` and an annihilator `E⊥ᵀE = 0`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SMatrix, Vector3, Vector4};

use crate::manifold::{self, hat, unvec3_cm, vec3_cm, LieState};

/// Problem dimensions: ambient state `n`, tangent `q`, control `m`, disturbance `p`, output `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub q: usize,
    pub m: usize,
    pub p: usize,
    pub l: usize,
}

/// `E` (q × m), `E_w` (q × p) and `E⊥` (q × (q − m)).
#[derive(Clone, Debug)]
pub struct EFactors {
    pub e: DMatrix<f64>,
    pub e_w: DMatrix<f64>,
    pub e_perp: DMatrix<f64>,
}

/// A control-affine system on a Lie group embedded in ℝⁿ, in ambient coordinates.
///
/// Every method takes the ambient state vector; implementations may assume it lies on
/// the manifold unless stated otherwise.
pub trait ControlAffineModel: Sync {
    fn dims(&self) -> Dims;

    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `∂f/∂x`.
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `∂b_i/∂x` for each column `b_i` of `B`.
    fn input_jacobians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>>;
    fn disturbance_matrix(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `∂b_{w,j}/∂x` for each column of `B_w`.
    fn disturbance_jacobians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>>;

    /// Tangent basis `S(x)` (n × q).
    fn tangent_basis(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// `P_S = S (SᵀS)⁻¹`.
    fn projection(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Directional derivative of `P_S` along the ambient vector `d`.
    fn projection_derivative(&self, x: &DVector<f64>, d: &DVector<f64>) -> DMatrix<f64>;
    fn e_factors(&self, x: &DVector<f64>) -> EFactors;

    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `(C, D) = (∂g/∂x, ∂g/∂u)`.
    fn output_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);

    /// Tracking error `ε(x, x*)` in ℝ^q with `ε(x, x) = 0`.
    fn error(&self, x: &DVector<f64>, x_star: &DVector<f64>) -> DVector<f64>;
    /// `∂ε/∂x` (q × n) with `x*` held fixed.
    fn error_jacobian(&self, x: &DVector<f64>, x_star: &DVector<f64>) -> DMatrix<f64>;

    fn vector_field(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.input_matrix(x) * u + self.disturbance_matrix(x) * w
    }

    /// `A(x, u, w) = ∂f/∂x + Σ u_i ∂b_i/∂x + Σ w_j ∂b_{w,j}/∂x`.
    fn ambient_a(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let mut a = self.drift_jacobian(x);
        for (ui, jb) in u.iter().zip(self.input_jacobians(x)) {
            a += jb * *ui;
        }
        for (wj, jb) in w.iter().zip(self.disturbance_jacobians(x)) {
            a += jb * *wj;
        }
        a
    }
}

/// Mass-normalized collective thrust and body rates, `u = [f_t/m, ω_B]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlInput {
    pub thrust_over_m: f64,
    pub omega_b: Vector3<f64>,
}

impl ControlInput {
    pub fn new(thrust_over_m: f64, omega_b: Vector3<f64>) -> Self {
        Self { thrust_over_m, omega_b }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust_over_m, self.omega_b.x, self.omega_b.y, self.omega_b.z)
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.to_vector().as_slice())
    }

    pub fn from_slice(u: &[f64]) -> Self {
        Self { thrust_over_m: u[0], omega_b: Vector3::new(u[1], u[2], u[3]) }
    }

    pub fn is_finite(&self) -> bool {
        self.thrust_over_m.is_finite() && self.omega_b.iter().all(|v| v.is_finite())
    }
}

/// Mass-normalized force disturbance and body-rate disturbance, `w = [f_d/m, ω_d]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Disturbance {
    pub f_d_over_m: Vector3<f64>,
    pub omega_d: Vector3<f64>,
}

impl Disturbance {
    pub fn new(f_d_over_m: Vector3<f64>, omega_d: Vector3<f64>) -> Self {
        Self { f_d_over_m, omega_d }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_iterator(6, self.f_d_over_m.iter().chain(self.omega_d.iter()).copied())
    }

    pub fn from_slice(w: &[f64]) -> Self {
        Self {
            f_d_over_m: Vector3::new(w[0], w[1], w[2]),
            omega_d: Vector3::new(w[3], w[4], w[5]),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.f_d_over_m.norm_squared() + self.omega_d.norm_squared()).sqrt()
    }
}

pub const GRAVITY: f64 = 9.81;

/// Rate-controlled quadrotor on ℝ⁶ × SO(3) with output `z = [Q p; R_w u]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrotor {
    pub mass: f64,
    pub gravity: Vector3<f64>,
    pub q_weight: Matrix3<f64>,
    pub r_weight: Matrix4<f64>,
}

impl Default for Quadrotor {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: Vector3::new(0.0, 0.0, -GRAVITY),
            q_weight: Matrix3::identity(),
            r_weight: Matrix4::from_diagonal(&Vector4::new(0.1, 0.5, 0.5, 0.5)),
        }
    }
}

type M15 = SMatrix<f64, 15, 15>;

fn block_id3(m: &mut DMatrix<f64>, r: usize, c: usize) {
    m.view_mut((r, c), (3, 3)).fill_with_identity();
}

/// `∂ vec(R H) / ∂ vec(R) = Hᵀ ⊗ I₃` for a constant `H`.
fn right_mul_jacobian(h: &Matrix3<f64>) -> SMatrix<f64, 9, 9> {
    let mut j = SMatrix::<f64, 9, 9>::zeros();
    for a in 0..3 {
        for b in 0..3 {
            let c = h[(b, a)];
            if c != 0.0 {
                j.fixed_view_mut::<3, 3>(3 * a, 3 * b).fill_diagonal(c);
            }
        }
    }
    j
}

impl Quadrotor {
    pub fn drift_state(&self, x: &LieState) -> DVector<f64> {
        let mut f = DVector::zeros(15);
        f.rows_mut(0, 3).copy_from(&x.v);
        f.rows_mut(3, 3).copy_from(&self.gravity);
        f
    }

    pub fn input_matrix_state(&self, x: &LieState) -> DMatrix<f64> {
        let r = x.r.matrix();
        let mut b = DMatrix::zeros(15, 4);
        b.view_mut((3, 0), (3, 1)).copy_from(&r.column(2));
        b.view_mut((6, 1), (9, 3)).copy_from(&manifold::rotation_tangent_basis(r));
        b
    }

    pub fn disturbance_matrix_state(&self, x: &LieState) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(15, 6);
        block_id3(&mut b, 3, 0);
        b.view_mut((6, 3), (9, 3)).copy_from(&manifold::rotation_tangent_basis(x.r.matrix()));
        b
    }

    pub fn e_factors_state(&self, x: &LieState) -> EFactors {
        let r = x.r.matrix();
        let mut e = DMatrix::zeros(9, 4);
        e.view_mut((3, 0), (3, 1)).copy_from(&r.column(2));
        block_id3(&mut e, 6, 1);
        let mut e_w = DMatrix::zeros(9, 6);
        e_w.view_mut((3, 0), (6, 6)).fill_with_identity();
        let mut e_perp = DMatrix::zeros(9, 5);
        block_id3(&mut e_perp, 0, 0);
        e_perp.view_mut((3, 3), (3, 1)).copy_from(&r.column(0));
        e_perp.view_mut((3, 4), (3, 1)).copy_from(&r.column(1));
        EFactors { e, e_w, e_perp }
    }

    pub fn output_state(&self, x: &LieState, u: &ControlInput) -> DVector<f64> {
        let mut z = DVector::zeros(7);
        z.rows_mut(0, 3).copy_from(&(self.q_weight * x.p));
        z.rows_mut(3, 4).copy_from(&(self.r_weight * u.to_vector()));
        z
    }

    /// `∂b_i/∂x` for the four input columns.
    fn input_jacobians_fixed(&self) -> [M15; 4] {
        let mut out = [M15::zeros(); 4];
        // b₁ = [0; R e₃; 0]: velocity rows pick the third column of R.
        out[0].fixed_view_mut::<3, 3>(3, 12).fill_with_identity();
        for i in 0..3 {
            let j = right_mul_jacobian(&hat(&Vector3::ith(i, 1.0)));
            out[i + 1].fixed_view_mut::<9, 9>(6, 6).copy_from(&j);
        }
        out
    }

    /// Largest `‖d/dt (RᵀR)‖_F` over the rotation blocks of `f`, the `b_i` and the `b_{w,j}`.
    /// Zero for every field that is tangent to SO(3) at `R`; works on off-manifold points.
    pub fn transversality_residual(&self, x: &DVector<f64>) -> f64 {
        let r = unvec3_cm(&x.as_slice()[6..15]);
        let b = self.input_matrix_unchecked(&r);
        let b_w = self.disturbance_matrix(x);
        let f = self.drift(x);
        std::iter::once(f.as_slice())
            .chain(b.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>().iter().map(|c| c.as_slice()))
            .chain(b_w.column_iter().map(|c| c.into_owned()).collect::<Vec<_>>().iter().map(|c| c.as_slice()))
            .map(|field| {
                let dr = unvec3_cm(&field[6..15]);
                (dr.transpose() * r + r.transpose() * dr).norm()
            })
            .fold(0.0, f64::max)
    }

    fn input_matrix_unchecked(&self, r: &Matrix3<f64>) -> DMatrix<f64> {
        self.input_matrix_state(&LieState::new(Vector3::zeros(), Vector3::zeros(), manifold::Rotation::from_matrix_unchecked(*r)))
    }
}

fn state(x: &DVector<f64>) -> LieState {
    LieState::from_ambient_unchecked(x.as_slice())
}

fn to_dmatrix<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

impl ControlAffineModel for Quadrotor {
    fn dims(&self) -> Dims {
        Dims { n: 15, q: 9, m: 4, p: 6, l: 7 }
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        self.drift_state(&state(x))
    }

    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(15, 15);
        block_id3(&mut a, 0, 3);
        a
    }

    fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.input_matrix_state(&state(x))
    }

    fn input_jacobians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.input_jacobians_fixed().iter().map(to_dmatrix).collect()
    }

    fn disturbance_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.disturbance_matrix_state(&state(x))
    }

    fn disturbance_jacobians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let b = self.input_jacobians_fixed();
        let zero = DMatrix::zeros(15, 15);
        vec![zero.clone(), zero.clone(), zero, to_dmatrix(&b[1]), to_dmatrix(&b[2]), to_dmatrix(&b[3])]
    }

    fn tangent_basis(&self, x: &DVector<f64>) -> DMatrix<f64> {
        to_dmatrix(&manifold::tangent_basis(&state(x)))
    }

    fn projection(&self, x: &DVector<f64>) -> DMatrix<f64> {
        to_dmatrix(&manifold::projection(&state(x)))
    }

    fn projection_derivative(&self, _x: &DVector<f64>, d: &DVector<f64>) -> DMatrix<f64> {
        to_dmatrix(&manifold::projection_derivative(d.as_slice()))
    }

    fn e_factors(&self, x: &DVector<f64>) -> EFactors {
        self.e_factors_state(&state(x))
    }

    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.output_state(&state(x), &ControlInput::from_slice(u.as_slice()))
    }

    fn output_jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut c = DMatrix::zeros(7, 15);
        c.view_mut((0, 0), (3, 3)).copy_from(&self.q_weight);
        let mut d = DMatrix::zeros(7, 4);
        d.view_mut((3, 0), (4, 4)).copy_from(&self.r_weight);
        (c, d)
    }

    fn error(&self, x: &DVector<f64>, x_star: &DVector<f64>) -> DVector<f64> {
        let e = manifold::error_function(&state(x), &state(x_star));
        DVector::from_column_slice(e.as_slice())
    }

    fn error_jacobian(&self, _x: &DVector<f64>, x_star: &DVector<f64>) -> DMatrix<f64> {
        to_dmatrix(&manifold::error_jacobian(&state(x_star)))
    }
}

/// Scalar linear system `ẋ = a x + b u + b_w w`, `z = c x + d u` on ℝ.
///
/// With `b ≠ 0` the annihilator `E⊥` is empty (1 × 0). Used as a hand-checkable case
/// for the certificate machinery.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarLinear {
    pub a: f64,
    pub b: f64,
    pub b_w: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for ScalarLinear {
    /// `ẋ = −x + u + w`, `z = x`.
    fn default() -> Self {
        Self { a: -1.0, b: 1.0, b_w: 1.0, c: 1.0, d: 0.0 }
    }
}

impl ControlAffineModel for ScalarLinear {
    fn dims(&self) -> Dims {
        Dims { n: 1, q: 1, m: 1, p: 1, l: 1 }
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.a
    }
    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.a)
    }
    fn input_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.b)
    }
    fn input_jacobians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(1, 1)]
    }
    fn disturbance_matrix(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.b_w)
    }
    fn disturbance_jacobians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(1, 1)]
    }
    fn tangent_basis(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn projection(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn projection_derivative(&self, _x: &DVector<f64>, _d: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn e_factors(&self, _x: &DVector<f64>) -> EFactors {
        EFactors {
            e: DMatrix::from_element(1, 1, self.b),
            e_w: DMatrix::from_element(1, 1, self.b_w),
            e_perp: DMatrix::zeros(1, 0),
        }
    }
    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        x * self.c + u * self.d
    }
    fn output_jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::from_element(1, 1, self.c), DMatrix::from_element(1, 1, self.d))
    }
    fn error(&self, x: &DVector<f64>, x_star: &DVector<f64>) -> DVector<f64> {
        x - x_star
    }
    fn error_jacobian(&self, _x: &DVector<f64>, _x_star: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
}

/// Rotation block of an ambient vector as a 3 × 3 matrix.
pub fn rotation_block(x: &DVector<f64>) -> Matrix3<f64> {
    unvec3_cm(&x.as_slice()[6..15])
}

/// Inverse of [`rotation_block`] for building ambient directions.
pub fn with_rotation_block(mut x: DVector<f64>, r: &Matrix3<f64>) -> DVector<f64> {
    x.rows_mut(6, 9).copy_from(&vec3_cm(r));
    x
}
