//! Straightforward per-sample assembly of the certificate conditions, used for
//! verification and as the reference for the batched training path.

use nalgebra::{DMatrix, DVector};

use super::{lpd_penalty, Directions, LossTerms, Mode, TrainSample};
use crate::error::Result;
use crate::nn::{spd_inverse, NeuralCertificate};
use crate::system::ControlAffineModel;

/// Closed-loop quantities at a sample: `u = u* + k`, `ẋ = f + Bu + B_w w`, `K = ∂k/∂x`, `A(x, u, w)`.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub u: DVector<f64>,
    pub x_dot: DVector<f64>,
    pub k: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

/// `C1` and the lists `C2,i`, `C3,j` (empty in CCM mode).
#[derive(Clone, Debug)]
pub struct CConditions {
    pub c1: DMatrix<f64>,
    pub c2: Vec<DMatrix<f64>>,
    pub c3: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct CertificateResiduals {
    /// Full R1 in RCCM mode, the `q × q` contraction block in CCM mode.
    pub r1: DMatrix<f64>,
    /// `None` in CCM mode.
    pub r2: Option<DMatrix<f64>>,
    pub c: CConditions,
}

fn disturbance_for(sample: &TrainSample, mode: Mode) -> DVector<f64> {
    match mode {
        Mode::Rccm => sample.w.clone(),
        Mode::Ccm => DVector::zeros(sample.w.len()),
    }
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

pub fn closed_loop_fields<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    sample: &TrainSample,
    mode: Mode,
) -> Result<ClosedLoop> {
    let w = disturbance_for(sample, mode);
    let u = cert.eval_controller(model, &sample.x, &sample.x_star, &sample.u_star)?;
    Ok(ClosedLoop {
        x_dot: model.vector_field(&sample.x, &u, &w),
        k: cert.controller_jacobian(model, &sample.x, &sample.x_star)?,
        a: model.ambient_a(&sample.x, &u, &w),
        u,
    })
}

fn a_script<S: ControlAffineModel + ?Sized>(model: &S, x: &DVector<f64>, cl: &ClosedLoop) -> DMatrix<f64> {
    let s = model.tangent_basis(x);
    let ps = model.projection(x);
    let pdot = model.projection_derivative(x, &cl.x_dot);
    let e = model.e_factors(x).e;
    (pdot.transpose() + ps.transpose() * &cl.a + e * &cl.k) * s
}

/// `𝒜 = (Ṗ_Sᵀ + P_Sᵀ A + E K) S`, with `Ṗ_S` the derivative of `P_S` along `ẋ`.
pub fn assemble_a_script<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    sample: &TrainSample,
    mode: Mode,
) -> Result<DMatrix<f64>> {
    let cl = closed_loop_fields(model, cert, sample, mode)?;
    Ok(a_script(model, &sample.x, &cl))
}

/// `Ṁ + ⟨M𝒜⟩ + 2λM` with `Ṁ = −M Ẇ M`.
fn contraction_block<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    x: &DVector<f64>,
    cl: &ClosedLoop,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (w, w_dot) = cert.eval_dual_metric_directional(x, &cl.x_dot)?;
    let m = spd_inverse(&w)?;
    let m_dot = -(&m * w_dot * &m);
    let ma = &m * a_script(model, x, cl);
    let block = m_dot + &ma + ma.transpose() + &m * (2.0 * cert.hyper.lambda);
    Ok((symmetrize(block), m))
}

/// `R1 = [[Ṁ + ⟨M𝒜⟩ + 2λM, M E_w], [E_wᵀ M, −μ I]]`; in CCM mode only the upper-left block
/// with `B_w` treated as zero.
pub fn assemble_r1<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    sample: &TrainSample,
    mode: Mode,
) -> Result<DMatrix<f64>> {
    let cl = closed_loop_fields(model, cert, sample, mode)?;
    r1_from(model, cert, &sample.x, &cl, mode)
}

fn r1_from<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    x: &DVector<f64>,
    cl: &ClosedLoop,
    mode: Mode,
) -> Result<DMatrix<f64>> {
    let (block, m) = contraction_block(model, cert, x, cl)?;
    if mode == Mode::Ccm {
        return Ok(block);
    }
    let e_w = model.e_factors(x).e_w;
    let (q, p) = (e_w.nrows(), e_w.ncols());
    let mut r1 = DMatrix::zeros(q + p, q + p);
    r1.view_mut((0, 0), (q, q)).copy_from(&block);
    let mew = &m * &e_w;
    r1.view_mut((0, q), (q, p)).copy_from(&mew);
    r1.view_mut((q, 0), (p, q)).copy_from(&mew.transpose());
    r1.view_mut((q, q), (p, p)).fill_diagonal(-cert.mu());
    Ok(r1)
}

/// `R2 = [[2λM − α⁻¹ 𝒞ᵀ𝒞, 0], [0, (α − μ) I]]` with `𝒞 = (C + D K) S`.
pub fn assemble_r2<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    sample: &TrainSample,
) -> Result<DMatrix<f64>> {
    let cl = closed_loop_fields(model, cert, sample, Mode::Rccm)?;
    r2_from(model, cert, &sample.x, &cl)
}

fn r2_from<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    x: &DVector<f64>,
    cl: &ClosedLoop,
) -> Result<DMatrix<f64>> {
    let dims = model.dims();
    let (q, p) = (dims.q, dims.p);
    let m = cert.eval_metric(x)?;
    let (c, d) = model.output_jacobians(x, &cl.u);
    let cs = (c + d * &cl.k) * model.tangent_basis(x);
    let alpha = cert.alpha();
    let mut r2 = DMatrix::zeros(q + p, q + p);
    r2.view_mut((0, 0), (q, q))
        .copy_from(&symmetrize(m * (2.0 * cert.hyper.lambda) - cs.tr_mul(&cs) / alpha));
    r2.view_mut((q, q), (p, p)).fill_diagonal(alpha - cert.mu());
    Ok(r2)
}

/// `E⊥ᵀ (−∂_v W + ⟨S_v W⟩ + c W) E⊥` with `S_v = (∂_v P_Sᵀ + P_Sᵀ ∂v/∂x) S`.
fn killing_condition<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    x: &DVector<f64>,
    field: &DVector<f64>,
    jac: &DMatrix<f64>,
    rate: f64,
    e_perp: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let s = model.tangent_basis(x);
    let ps = model.projection(x);
    let sv = (model.projection_derivative(x, field).transpose() + ps.transpose() * jac) * s;
    let (w, dw) = cert.eval_dual_metric_directional(x, field)?;
    let svw = sv * &w;
    let inner = -dw + &svw + svw.transpose() + w * rate;
    Ok(symmetrize(e_perp.transpose() * inner * e_perp))
}

/// `C1` along the drift (with `2λW`), `C2,i` along each input column and `C3,j` along each
/// disturbance column (RCCM only).
pub fn assemble_c_conditions<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    sample: &TrainSample,
    mode: Mode,
) -> Result<CConditions> {
    let x = &sample.x;
    let e_perp = model.e_factors(x).e_perp;
    let lambda = cert.hyper.lambda;
    let c1 = killing_condition(model, cert, x, &model.drift(x), &model.drift_jacobian(x), 2.0 * lambda, &e_perp)?;
    let b = model.input_matrix(x);
    let c2 = model
        .input_jacobians(x)
        .iter()
        .enumerate()
        .map(|(i, j)| killing_condition(model, cert, x, &b.column(i).into_owned(), j, 0.0, &e_perp))
        .collect::<Result<Vec<_>>>()?;
    let c3 = match mode {
        Mode::Ccm => Vec::new(),
        Mode::Rccm => {
            let bw = model.disturbance_matrix(x);
            model
                .disturbance_jacobians(x)
                .iter()
                .enumerate()
                .map(|(i, j)| killing_condition(model, cert, x, &bw.column(i).into_owned(), j, 0.0, &e_perp))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(CConditions { c1, c2, c3 })
}

pub fn residuals<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    sample: &TrainSample,
    mode: Mode,
) -> Result<CertificateResiduals> {
    let cl = closed_loop_fields(model, cert, sample, mode)?;
    let r1 = r1_from(model, cert, &sample.x, &cl, mode)?;
    let r2 = match mode {
        Mode::Rccm => Some(r2_from(model, cert, &sample.x, &cl)?),
        Mode::Ccm => None,
    };
    Ok(CertificateResiduals { r1, r2, c: assemble_c_conditions(model, cert, sample, mode)? })
}

/// Per-sample loss: RCCM mode sums all seven terms, CCM mode the contraction, C1, C2 and
/// metric-bound terms.
pub fn sample_loss<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    sample: &TrainSample,
    dirs: &Directions,
    mode: Mode,
) -> Result<(f64, LossTerms)> {
    let res = residuals(model, cert, sample, mode)?;
    let w = cert.eval_dual_metric(&sample.x)?;
    let bound = DMatrix::identity(w.nrows(), w.ncols()) / cert.hyper.m_lower - w;
    let mut t = LossTerms {
        lpd_r1: lpd_penalty(&-&res.r1, &dirs.r1),
        lpd_c1: lpd_penalty(&-&res.c.c1, &dirs.c1),
        frob_c2: res.c.c2.iter().map(|c| c.norm()).sum(),
        lpd_bound: lpd_penalty(&bound, &dirs.bound),
        ..LossTerms::default()
    };
    if let Some(r2) = &res.r2 {
        t.lpd_r2 = lpd_penalty(r2, &dirs.r2);
        t.frob_c3 = res.c.c3.iter().map(|c| c.norm()).sum();
        t.relu_alpha = (cert.alpha() - cert.hyper.alpha_floor).max(0.0);
    }
    Ok((t.total(), t))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::certificate::{sphere_directions, SamplingBoxes};
    use crate::nn::{softplus_inv, Hyper, Mlp};
    use crate::system::{Quadrotor, ScalarLinear};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Constant certificate `M = 1`, `k = 0`, `α = μ = 1` on the scalar system.
    pub(crate) fn hand_certificate() -> NeuralCertificate {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hyper = Hyper { alpha_floor: 1.0, ..Hyper::default() };
        let mut c = NeuralCertificate::new(ScalarLinear::default().dims(), 1, &[4], hyper, &mut rng);
        c.theta_w = Mlp::zeros(&c.theta_w.widths());
        c.theta_w.layers_mut()[1].bias[0] = (1.0 - 1.0 / hyper.m_upper).sqrt();
        c.theta_k1 = Mlp::zeros(&c.theta_k1.widths());
        c.theta_k2 = Mlp::zeros(&c.theta_k2.widths());
        c.theta_alpha = softplus_inv(1.0);
        c.theta_mu = softplus_inv(1.0);
        c
    }

    fn scalar_sample(x: f64, xs: f64, u: f64, w: f64) -> TrainSample {
        let v = |a: f64| DVector::from_element(1, a);
        TrainSample { x: v(x), x_star: v(xs), u_star: v(u), w: v(w) }
    }

    #[test]
    fn hand_system_lmis() {
        let sys = ScalarLinear::default();
        let c = hand_certificate();
        let s = scalar_sample(0.3, -0.2, 0.1, 0.5);
        assert!((assemble_a_script(&sys, &c, &s, Mode::Rccm).unwrap()[(0, 0)] + 1.0).abs() < 1e-15);
        let r1 = assemble_r1(&sys, &c, &s, Mode::Rccm).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!((r1 - expect).amax() < 1e-12);
        let r2 = assemble_r2(&sys, &c, &s).unwrap();
        assert!(r2.amax() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dirs = Directions::sample(&mut rng, 1, 1, 0, 64, Mode::Rccm);
        let (loss, _) = sample_loss(&sys, &c, &s, &dirs, Mode::Rccm).unwrap();
        assert!(loss.abs() < 1e-12, "loss {loss}");
    }

    fn quad_cert(seed: u64) -> NeuralCertificate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = NeuralCertificate::new(Quadrotor::default().dims(), 45, &[16, 16], Hyper::default(), &mut rng);
        for net in [&mut c.theta_w, &mut c.theta_k1, &mut c.theta_k2] {
            let last = net.layers_mut().last_mut().unwrap();
            last.bias = DVector::from_fn(last.bias.len(), |_, _| rng.random_range(-0.3..0.3));
        }
        c
    }

    #[test]
    fn closed_loop_matches_manual_composition() {
        let q = Quadrotor::default();
        let c = quad_cert(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SamplingBoxes::default().sample(&mut rng);
        let cl = closed_loop_fields(&q, &c, &s, Mode::Rccm).unwrap();
        let u = c.eval_controller(&q, &s.x, &s.x_star, &s.u_star).unwrap();
        assert_eq!(cl.u, u);
        let xd = q.drift(&s.x) + q.input_matrix(&s.x) * &u + q.disturbance_matrix(&s.x) * &s.w;
        assert!((&cl.x_dot - xd).amax() < 1e-13);
        // The disturbance only moves velocity and rotation rows.
        let cl0 = closed_loop_fields(&q, &c, &s, Mode::Ccm).unwrap();
        assert_eq!((&cl.x_dot - &cl0.x_dot).rows(0, 3).amax(), 0.0);
    }

    #[test]
    fn hover_sample_is_an_equilibrium() {
        let q = Quadrotor::default();
        let c = quad_cert(4);
        let x = crate::manifold::LieState::hover(nalgebra::Vector3::new(1.0, 2.0, 3.0)).to_dvector();
        let s = TrainSample { x: x.clone(), x_star: x, u_star: DVector::from_column_slice(&[9.81, 0.0, 0.0, 0.0]), w: DVector::zeros(6) };
        let cl = closed_loop_fields(&q, &c, &s, Mode::Rccm).unwrap();
        assert!(cl.x_dot.amax() < 1e-12);
    }

    #[test]
    fn projection_rate_matches_flow_finite_differences() {
        let q = Quadrotor::default();
        let c = quad_cert(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let s = SamplingBoxes::default().sample(&mut rng);
            let cl = closed_loop_fields(&q, &c, &s, Mode::Rccm).unwrap();
            let pdot = q.projection_derivative(&s.x, &cl.x_dot);
            let h = 1e-6;
            let fd = (q.projection(&(&s.x + &cl.x_dot * h)) - q.projection(&(&s.x - &cl.x_dot * h))) / (2.0 * h);
            assert!((&pdot - &fd).amax() / fd.amax().max(1e-3) < 1e-5);
        }
    }

    #[test]
    fn metric_rate_identity() {
        let q = Quadrotor::default();
        let c = quad_cert(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let s = SamplingBoxes::default().sample(&mut rng);
            let cl = closed_loop_fields(&q, &c, &s, Mode::Rccm).unwrap();
            let (w, w_dot) = c.eval_dual_metric_directional(&s.x, &cl.x_dot).unwrap();
            let m = spd_inverse(&w).unwrap();
            let m_dot = -(&m * w_dot * &m);
            let h = 1e-5;
            let fd = (c.eval_metric(&(&s.x + &cl.x_dot * h)).unwrap() - c.eval_metric(&(&s.x - &cl.x_dot * h)).unwrap())
                / (2.0 * h);
            assert!((&m_dot - &fd).amax() / fd.amax().max(1e-3) < 1e-5);
        }
    }

    #[test]
    fn a_script_term_isolation() {
        // With K = 0 and a field whose Jacobian vanishes, 𝒜 reduces to Ṗ_Sᵀ S.
        let q = Quadrotor { gravity: nalgebra::Vector3::zeros(), ..Quadrotor::default() };
        let mut c = quad_cert(9);
        c.theta_k1 = Mlp::zeros(&c.theta_k1.widths());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut s = SamplingBoxes::default().sample(&mut rng);
        s.u_star = DVector::from_column_slice(&[0.0, 0.3, -0.2, 0.5]);
        s.w = DVector::zeros(6);
        s.x.rows_mut(3, 3).fill(0.0);
        let cl = closed_loop_fields(&q, &c, &s, Mode::Rccm).unwrap();
        assert_eq!(cl.k.amax(), 0.0);
        let a = assemble_a_script(&q, &c, &s, Mode::Rccm).unwrap();
        let s_mat = q.tangent_basis(&s.x);
        let expect = (q.projection_derivative(&s.x, &cl.x_dot).transpose() + q.projection(&s.x).transpose() * &cl.a) * &s_mat;
        assert!((&a - expect).amax() < 1e-14);
    }

    #[test]
    fn shapes_and_symmetry() {
        let q = Quadrotor::default();
        let c = quad_cert(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let s = SamplingBoxes::default().sample(&mut rng);
            let r = residuals(&q, &c, &s, Mode::Rccm).unwrap();
            let r2 = r.r2.unwrap();
            assert_eq!(r.r1.shape(), (15, 15));
            assert_eq!(r2.shape(), (15, 15));
            assert_eq!(r.c.c1.shape(), (5, 5));
            assert_eq!((r.c.c2.len(), r.c.c3.len()), (4, 6));
            for m in [&r.r1, &r2, &r.c.c1].into_iter().chain(&r.c.c2).chain(&r.c.c3) {
                assert_eq!((m - m.transpose()).amax(), 0.0);
            }
            assert_eq!(r2.view((0, 9), (9, 6)).amax(), 0.0);
            let ccm = residuals(&q, &c, &s, Mode::Ccm).unwrap();
            assert_eq!(ccm.r1.shape(), (9, 9));
            assert!(ccm.r2.is_none() && ccm.c.c3.is_empty());
        }
    }

    /// The quadrotor with its drift removed (`f ≡ 0`).
    struct Driftless(Quadrotor);

    impl ControlAffineModel for Driftless {
        fn dims(&self) -> crate::system::Dims {
            self.0.dims()
        }
        fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(x.len())
        }
        fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(x.len(), x.len())
        }
        fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
            self.0.input_matrix(x)
        }
        fn input_jacobians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
            self.0.input_jacobians(x)
        }
        fn disturbance_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
            self.0.disturbance_matrix(x)
        }
        fn disturbance_jacobians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
            self.0.disturbance_jacobians(x)
        }
        fn tangent_basis(&self, x: &DVector<f64>) -> DMatrix<f64> {
            self.0.tangent_basis(x)
        }
        fn projection(&self, x: &DVector<f64>) -> DMatrix<f64> {
            self.0.projection(x)
        }
        fn projection_derivative(&self, x: &DVector<f64>, d: &DVector<f64>) -> DMatrix<f64> {
            self.0.projection_derivative(x, d)
        }
        fn e_factors(&self, x: &DVector<f64>) -> crate::system::EFactors {
            self.0.e_factors(x)
        }
        fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
            self.0.output(x, u)
        }
        fn output_jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
            self.0.output_jacobians(x, u)
        }
        fn error(&self, x: &DVector<f64>, x_star: &DVector<f64>) -> DVector<f64> {
            self.0.error(x, x_star)
        }
        fn error_jacobian(&self, x: &DVector<f64>, x_star: &DVector<f64>) -> DMatrix<f64> {
            self.0.error_jacobian(x, x_star)
        }
    }

    #[test]
    fn constant_metric_without_drift_violates_c1() {
        // f ≡ 0 and constant W: C1 = 2λ E⊥ᵀ W E⊥ ≻ 0.
        let q = Driftless(Quadrotor::default());
        let mut c = quad_cert(13);
        c.theta_w = Mlp::zeros(&c.theta_w.widths());
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let s = SamplingBoxes::default().sample(&mut rng);
        let cc = assemble_c_conditions(&q, &c, &s, Mode::Rccm).unwrap();
        let e_perp = q.e_factors(&s.x).e_perp;
        let expect = e_perp.transpose() * &e_perp * (2.0 * 0.5 * 0.1);
        assert!((&cc.c1 - expect).amax() < 1e-15);
        assert!(cc.c1.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn velocity_disturbance_columns_have_no_projection_rate() {
        let q = Quadrotor::default();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let s = SamplingBoxes::default().sample(&mut rng);
        let bw = q.disturbance_matrix(&s.x);
        for j in 0..3 {
            assert_eq!(q.projection_derivative(&s.x, &bw.column(j).into_owned()).amax(), 0.0);
        }
    }

    #[test]
    fn r2_lower_block_grows_with_alpha() {
        let q = Quadrotor::default();
        let mut c = quad_cert(16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = SamplingBoxes::default().sample(&mut rng);
        let mut last = f64::NEG_INFINITY;
        for a in [0.5, 1.0, 2.0, 4.0] {
            c.theta_alpha = softplus_inv(a);
            let r2 = assemble_r2(&q, &c, &s).unwrap();
            let low = r2.view((9, 9), (6, 6)).into_owned().symmetric_eigenvalues().min();
            assert!(low > last);
            last = low;
        }
    }

    #[test]
    fn zero_metric_cert_has_no_bound_penalty() {
        let q = Quadrotor::default();
        let mut c = quad_cert(18);
        c.theta_w = Mlp::zeros(&c.theta_w.widths());
        c.theta_alpha = softplus_inv(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let s = SamplingBoxes::default().sample(&mut rng);
        let dirs = Directions::sample(&mut rng, 9, 6, 5, 64, Mode::Rccm);
        let (_, t) = sample_loss(&q, &c, &s, &dirs, Mode::Rccm).unwrap();
        assert_eq!(t.lpd_bound, 0.0);
        assert_eq!(t.relu_alpha, 0.0);
        let _ = sphere_directions(&mut rng, 3, 1);
    }
}
