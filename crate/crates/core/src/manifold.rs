//! Lie-group primitives for the state space ℝ⁶ × SO(3) embedded in ℝ¹⁵.
//!
//! Matrices are vectorized column-major throughout, so that
//! `vec(G Ξ) = (I ⊗ G) vec(Ξ)` holds and the tangent basis of SO(3) at `R`
//! is `[vec(R e₁^∧), vec(R e₂^∧), vec(R e₃^∧)]`.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

/// Ambient dimension of the quadrotor state.
pub const AMBIENT_DIM: usize = 15;
/// Intrinsic (tangent) dimension of the quadrotor state.
pub const TANGENT_DIM: usize = 9;

const ROTATION_TOL: f64 = 1e-9;
const SKEW_TOL: f64 = 1e-8;

pub type Vector9 = SVector<f64, 9>;
pub type Vector15 = SVector<f64, 15>;
pub type Matrix9x3 = SMatrix<f64, 9, 3>;
pub type Matrix15x9 = SMatrix<f64, 15, 9>;

/// Skew-symmetric matrix with `hat(a) * b == a.cross(b)`.
pub fn hat(phi: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -phi.z, phi.y, //
        phi.z, 0.0, -phi.x, //
        -phi.y, phi.x, 0.0,
    )
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part exceeds `1e-8` in Frobenius norm.
pub fn vee(s: &Matrix3<f64>) -> Result<Vector3<f64>> {
    if (s + s.transpose()).norm() > SKEW_TOL {
        return Err(Error::NotSkew);
    }
    Ok(vee_unchecked(s))
}

/// [`vee`] of the skew part, without the symmetry check.
pub(crate) fn vee_unchecked(s: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (s[(2, 1)] - s[(1, 2)]),
        0.5 * (s[(0, 2)] - s[(2, 0)]),
        0.5 * (s[(1, 0)] - s[(0, 1)]),
    )
}

/// Column-major vectorization of a square (or any) matrix.
pub fn vec_cm(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn vec3_cm(m: &Matrix3<f64>) -> Vector9 {
    Vector9::from_column_slice(m.as_slice())
}

pub fn unvec3_cm(v: &[f64]) -> Matrix3<f64> {
    Matrix3::from_column_slice(&v[..9])
}

/// `E_vec`: column `i` is `vec(e_i^∧)`.
pub fn so3_basis_evec() -> Matrix9x3 {
    rotation_tangent_basis(&Matrix3::identity())
}

/// `S_r(R) = [vec(R e₁^∧) vec(R e₂^∧) vec(R e₃^∧)]`. Linear in `R`, so it is also
/// the directional derivative of `S_r` along `R`.
pub fn rotation_tangent_basis(r: &Matrix3<f64>) -> Matrix9x3 {
    let mut s = Matrix9x3::zeros();
    for i in 0..3 {
        let col = vec3_cm(&(r * hat(&Vector3::ith(i, 1.0))));
        s.set_column(i, &col);
    }
    s
}

/// A rotation matrix, `RᵀR = I`, `det R = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Checks orthogonality and orientation to `1e-9`.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let orth = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if !orth.is_finite() || orth > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotRotation { orth, det });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller knows to be a rotation (e.g. an RK4 iterate before retraction).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// `exp(hat(phi))` by Rodrigues' formula.
    pub fn exp(phi: &Vector3<f64>) -> Self {
        let theta = phi.norm();
        let k = hat(phi);
        if theta < 1e-12 {
            return Self(Matrix3::identity() + k);
        }
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    /// Z-Y-X (yaw, pitch, roll) composition `Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Self {
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
        let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
        Self(rz * ry * rx)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Box of Euler angles (radians) used when sampling attitudes.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EulerBox {
    pub roll: [f64; 2],
    pub pitch: [f64; 2],
    pub yaw: [f64; 2],
}

impl Default for EulerBox {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self { roll: [-1.0, 1.0], pitch: [-1.0, 1.0], yaw: [-PI, PI] }
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Draws Euler angles uniformly in `ranges` and composes them Z-Y-X.
pub fn sample_rotation<R: Rng + ?Sized>(rng: &mut R, ranges: &EulerBox) -> Rotation {
    let roll = uniform(rng, ranges.roll);
    let pitch = uniform(rng, ranges.pitch);
    let yaw = uniform(rng, ranges.yaw);
    Rotation::from_euler_zyx(roll, pitch, yaw)
}

/// Orthonormalizes a matrix near SO(3): modified Gram-Schmidt on the columns,
/// then the third column is flipped if needed so that `det = +1`.
pub fn retract_rotation(m: &Matrix3<f64>) -> Result<Rotation> {
    let dev = (m.transpose() * m - Matrix3::identity()).norm();
    if !dev.is_finite() || dev >= 0.5 {
        return Err(Error::DegenerateRotation);
    }
    let mut cols = [m.column(0).into_owned(), m.column(1).into_owned(), m.column(2).into_owned()];
    for i in 0..3 {
        for j in 0..i {
            let proj = cols[j].dot(&cols[i]);
            let cj = cols[j];
            cols[i] -= cj * proj;
        }
        let n = cols[i].norm();
        if n < 1e-6 {
            return Err(Error::DegenerateRotation);
        }
        cols[i] /= n;
    }
    let mut r = Matrix3::from_columns(&cols);
    if r.determinant() < 0.0 {
        r.set_column(2, &(-cols[2]));
    }
    Ok(Rotation(r))
}

/// A point of ℝ³ × ℝ³ × SO(3): position, velocity and body-to-inertial attitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LieState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub r: Rotation,
}

impl LieState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>, r: Rotation) -> Self {
        Self { p, v, r }
    }

    pub fn hover(p: Vector3<f64>) -> Self {
        Self { p, v: Vector3::zeros(), r: Rotation::identity() }
    }

    /// `[p; v; vec(R)]`.
    pub fn to_ambient(&self) -> Vector15 {
        let mut x = Vector15::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x.fixed_rows_mut::<9>(6).copy_from(&vec3_cm(self.r.matrix()));
        x
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.to_ambient().as_slice())
    }

    /// Rebuilds a state from ambient coordinates; the rotation block must satisfy the
    /// rotation invariants.
    pub fn from_ambient(x: &[f64]) -> Result<Self> {
        if x.len() != AMBIENT_DIM {
            return Err(Error::Dimension { expected: AMBIENT_DIM, got: x.len() });
        }
        Ok(Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
            r: Rotation::new(unvec3_cm(&x[6..15]))?,
        })
    }

    /// Like [`LieState::from_ambient`] but accepts an off-manifold rotation block.
    pub fn from_ambient_unchecked(x: &[f64]) -> Self {
        Self {
            p: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
            r: Rotation::from_matrix_unchecked(unvec3_cm(&x[6..15])),
        }
    }
}

/// `S(x) = diag(I₆, S_r(R))`.
pub fn tangent_basis(x: &LieState) -> Matrix15x9 {
    let mut s = Matrix15x9::zeros();
    s.fixed_view_mut::<6, 6>(0, 0).fill_with_identity();
    s.fixed_view_mut::<9, 3>(6, 6).copy_from(&rotation_tangent_basis(x.r.matrix()));
    s
}

/// `P_S = S (SᵀS)⁻¹ = S diag(I₆, ½ I₃)`.
pub fn projection(x: &LieState) -> Matrix15x9 {
    let mut p = Matrix15x9::zeros();
    p.fixed_view_mut::<6, 6>(0, 0).fill_with_identity();
    p.fixed_view_mut::<9, 3>(6, 6).copy_from(&(rotation_tangent_basis(x.r.matrix()) * 0.5));
    p
}

/// Directional derivative of [`projection`] along an ambient direction `d`.
/// Only the rotation block of `d` matters.
pub fn projection_derivative(d: &[f64]) -> Matrix15x9 {
    let mut p = Matrix15x9::zeros();
    let dr = unvec3_cm(&d[6..15]);
    p.fixed_view_mut::<9, 3>(6, 6).copy_from(&(rotation_tangent_basis(&dr) * 0.5));
    p
}

/// Attitude error `½ (R*ᵀR − RᵀR*)^∨`.
pub fn rotation_error(r: &Matrix3<f64>, r_star: &Matrix3<f64>) -> Vector3<f64> {
    let e = r_star.transpose() * r;
    vee_unchecked(&(e - e.transpose())) * 0.5
}

/// `ε(x, x*) = [p − p*; v − v*; ½ (R*ᵀR − RᵀR*)^∨]`.
pub fn error_function(x: &LieState, x_star: &LieState) -> Vector9 {
    let mut e = Vector9::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&(x.p - x_star.p));
    e.fixed_rows_mut::<3>(3).copy_from(&(x.v - x_star.v));
    e.fixed_rows_mut::<3>(6)
        .copy_from(&rotation_error(x.r.matrix(), x_star.r.matrix()));
    e
}

/// Ambient Jacobian `∂ε/∂x` (9 × 15) with `x*` held fixed.
pub fn error_jacobian(x_star: &LieState) -> SMatrix<f64, 9, 15> {
    let mut j = SMatrix::<f64, 9, 15>::zeros();
    j.fixed_view_mut::<6, 6>(0, 0).fill_with_identity();
    let rs = x_star.r.matrix();
    for k in 0..9 {
        let mut dr = Matrix3::zeros();
        dr[(k % 3, k / 3)] = 1.0;
        let de = rs.transpose() * dr;
        let col = vee_unchecked(&(de - de.transpose())) * 0.5;
        j.fixed_view_mut::<3, 1>(6, 6 + k).copy_from(&col);
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng) -> LieState {
        let p = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let v = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        LieState::new(p, v, sample_rotation(rng, &EulerBox::default()))
    }

    #[test]
    fn hat_basics() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(
            hat(&Vector3::z()),
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        let a = Vector3::new(1.0, 2.0, 3.0);
        let b = Vector3::new(4.0, 5.0, 6.0);
        assert_eq!(hat(&a) * b, Vector3::new(-3.0, 6.0, -3.0));
        assert_eq!(hat(&a) * b, a.cross(&b));
    }

    #[test]
    fn vee_inverts_hat_and_rejects_symmetric() {
        let a = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&hat(&a)).unwrap(), a);
        assert_eq!(vee(&Matrix3::zeros()).unwrap(), Vector3::zeros());
        assert!(matches!(vee(&Matrix3::identity()), Err(Error::NotSkew)));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let s = (e.transpose() - e) * 0.5;
        let t = (e - e.transpose()) * 0.5;
        assert_relative_eq!(vee(&s).unwrap(), -vee(&t).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn vec_is_column_major() {
        assert_eq!(vec_cm(&DMatrix::identity(2, 2)).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec_cm(&m).as_slice(), &[1.0, 3.0, 2.0, 4.0]);
    }

    fn kron_identity(d: usize, g: &DMatrix<f64>) -> DMatrix<f64> {
        let n = g.nrows();
        let mut k = DMatrix::zeros(d * n, d * g.ncols());
        for b in 0..d {
            k.view_mut((b * n, b * g.ncols()), (n, g.ncols())).copy_from(g);
        }
        k
    }

    #[test]
    fn kronecker_identity_holds_for_column_major() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
            let xi = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
            let lhs = vec_cm(&(&g * &xi));
            let rhs = kron_identity(3, &g) * vec_cm(&xi);
            assert!((lhs - rhs).amax() < 1e-12);
        }
        let g = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 - 2.5);
        let h1 = DMatrix::from_column_slice(3, 3, hat(&Vector3::x()).as_slice());
        assert!((vec_cm(&(&g * &h1)) - kron_identity(3, &g) * vec_cm(&h1)).amax() < 1e-14);
    }

    #[test]
    fn evec_columns_and_gram() {
        let e = so3_basis_evec();
        let h1 = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(e.column(0).into_owned(), vec3_cm(&h1));
        assert_eq!(e.transpose() * e, SMatrix::<f64, 3, 3>::identity() * 2.0);
        let a = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(e * a, vec3_cm(&hat(&a)));
    }

    #[test]
    fn tangent_basis_and_projection() {
        let id = LieState::hover(Vector3::zeros());
        let s = tangent_basis(&id);
        assert_eq!(s.fixed_view::<9, 3>(6, 6).into_owned(), so3_basis_evec());
        assert_eq!(
            projection(&id).fixed_view::<9, 3>(6, 6).into_owned(),
            so3_basis_evec() * 0.5
        );

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = random_state(&mut rng);
            let s = tangent_basis(&x);
            let sr = s.fixed_view::<9, 3>(6, 6);
            assert!((sr.transpose() * sr - Matrix3::identity() * 2.0).amax() < 1e-12);
            assert_eq!(s.fixed_view::<6, 3>(0, 6).amax(), 0.0);
            assert_eq!(s.fixed_view::<9, 6>(6, 0).amax(), 0.0);
            let p = projection(&x);
            assert!((p.transpose() * s - SMatrix::<f64, 9, 9>::identity()).amax() < 1e-12);
            let v = Vector9::from_fn(|_, _| rng.random_range(-1.0..1.0));
            assert!((p.transpose() * (s * v) - v).amax() < 1e-12);
        }
    }

    #[test]
    fn error_function_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_state(&mut rng);
        assert_eq!(error_function(&x, &x), Vector9::zeros());

        let xs = random_state(&mut rng);
        let rot = xs.r * Rotation::exp(&(Vector3::z() * 0.3));
        let x = LieState::new(xs.p, xs.v, rot);
        let e = error_function(&x, &xs);
        assert_relative_eq!(e.fixed_rows::<3>(6).into_owned(), Vector3::z() * 0.3f64.sin(), epsilon = 1e-12);

        let xs = LieState::hover(Vector3::zeros());
        let x = LieState::hover(Vector3::new(1.0, -2.0, 0.5));
        let e = error_function(&x, &xs);
        assert_eq!(e.as_slice(), &[1.0, -2.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn error_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_state(&mut rng);
        let xs = random_state(&mut rng);
        let j = error_jacobian(&xs);
        let h = 1e-6;
        for k in 0..15 {
            let mut a = x.to_ambient();
            let mut b = x.to_ambient();
            a[k] += h;
            b[k] -= h;
            let fa = error_function(&LieState::from_ambient_unchecked(a.as_slice()), &xs);
            let fb = error_function(&LieState::from_ambient_unchecked(b.as_slice()), &xs);
            let fd = (fa - fb) / (2.0 * h);
            assert!((fd - j.column(k)).amax() < 1e-8);
        }
    }

    #[test]
    fn sampled_rotations() {
        assert_eq!(*Rotation::from_euler_zyx(0.0, 0.0, 0.0).matrix(), Matrix3::identity());
        let yaw = Rotation::from_euler_zyx(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(
            *yaw.matrix(),
            *Rotation::exp(&(Vector3::z() * std::f64::consts::FRAC_PI_2)).matrix(),
            epsilon = 1e-15
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let r = sample_rotation(&mut rng, &EulerBox::default());
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
            assert!(Rotation::new(*r.matrix()).is_ok());
        }
    }

    #[test]
    fn retraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = sample_rotation(&mut rng, &EulerBox::default());
        let back = retract_rotation(r.matrix()).unwrap();
        assert!((back.matrix() - r.matrix()).amax() < 1e-14);

        let m = Matrix3::identity() + hat(&Vector3::new(1.0, 1.0, 1.0)) * 1e-3;
        assert!(retract_rotation(&m).unwrap().orthogonality_error() < 1e-12);

        let m = Matrix3::identity() * 1.001;
        assert!((retract_rotation(&m).unwrap().matrix() - Matrix3::identity()).amax() < 1e-15);

        assert!(matches!(retract_rotation(&Matrix3::zeros()), Err(Error::DegenerateRotation)));
    }

    #[test]
    fn rotation_rejects_non_orthogonal() {
        assert!(Rotation::new(Matrix3::identity() * 1.1).is_err());
        assert!(Rotation::new(-Matrix3::identity()).is_err());
    }
}
