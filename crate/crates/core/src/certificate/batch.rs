//! Batched loss and exact parameter gradient.
//!
//! The closed-loop rate matrix is affine in the control and disturbance,
//! `𝒜 = S_f + Σ u_i S_{b_i} + Σ w_j S_{b_w,j} + E K S`, and so is `Ẇ`. Per sample we therefore
//! only need `Θ` with tangents along `f, b_i, b_w,j`, and the controller networks with
//! tangents along the columns of `S`. Samples are stacked into dual blocks so each network
//! runs as a handful of large matrix products; the adjoint of the condition assembly is
//! written out by hand and fed to [`Mlp::backward_batch`].

use nalgebra::{DMatrix, DVector};

use super::{lpd_with_adjoint, Directions, LossTerms, Mode, TrainSample};
use crate::exec::Execution;
use crate::nn::{concat, gram_plus_floor, sigmoid, spd_inverse, Mlp, NeuralCertificate};
use crate::system::{ControlAffineModel, EFactors};

/// Samples per dual-block matrix product.
const CHUNK: usize = 16;

/// Sums over a batch of the per-sample loss, its named terms and its parameter gradient
/// (in [`NeuralCertificate::write_params`] order).
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: f64,
    pub terms: LossTerms,
    pub grad: Vec<f64>,
    /// First sample (index into the batch) whose loss was not finite, with the term name.
    pub non_finite: Option<(usize, &'static str)>,
}

/// Parameter-independent geometry of one sample.
struct Frozen {
    err: DVector<f64>,
    s: DMatrix<f64>,
    fields: DMatrix<f64>,
    sv: Vec<DMatrix<f64>>,
    ef: EFactors,
    cs: DMatrix<f64>,
    d: DMatrix<f64>,
    eta: DMatrix<f64>,
    w: DVector<f64>,
}

fn freeze<S: ControlAffineModel + ?Sized>(model: &S, s: &TrainSample, mode: Mode) -> Frozen {
    let x = &s.x;
    let s_mat = model.tangent_basis(x);
    let ps_t = model.projection(x).transpose();
    let b = model.input_matrix(x);
    let mut cols = vec![model.drift(x)];
    let mut jacs = vec![model.drift_jacobian(x)];
    cols.extend(b.column_iter().map(|c| c.into_owned()));
    jacs.extend(model.input_jacobians(x));
    let w = match mode {
        Mode::Rccm => {
            let bw = model.disturbance_matrix(x);
            cols.extend(bw.column_iter().map(|c| c.into_owned()));
            jacs.extend(model.disturbance_jacobians(x));
            s.w.clone()
        }
        Mode::Ccm => DVector::zeros(s.w.len()),
    };
    let sv = cols
        .iter()
        .zip(&jacs)
        .map(|(f, j)| (model.projection_derivative(x, f).transpose() + &ps_t * j) * &s_mat)
        .collect();
    let (c, d) = model.output_jacobians(x, &s.u_star);
    Frozen {
        err: model.error(x, &s.x_star),
        cs: c * &s_mat,
        d,
        eta: model.error_jacobian(x, &s.x_star) * &s_mat,
        ef: model.e_factors(x),
        fields: DMatrix::from_columns(&cols),
        sv,
        s: s_mat,
        w,
    }
}

struct Ctx<'a> {
    q: usize,
    m: usize,
    h: usize,
    nf: usize,
    lambda: f64,
    alpha: f64,
    mu: f64,
    floor: f64,
    bound: f64,
    alpha_floor: f64,
    mode: Mode,
    dirs: &'a Directions,
}

struct SampleOut {
    terms: LossTerms,
    cot_w: DMatrix<f64>,
    cot_k1: DMatrix<f64>,
    cot_k2: DMatrix<f64>,
    alpha_bar: f64,
    mu_bar: f64,
}

fn rows(col: &[f64], r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, col)
}

fn put_rows(dst: &mut DMatrix<f64>, j: usize, a: &DMatrix<f64>) {
    dst.column_mut(j).copy_from_slice(a.transpose().as_slice());
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

fn sample_pass(
    fz: &Frozen,
    u_star: &DVector<f64>,
    ow: &DMatrix<f64>,
    o1: &DMatrix<f64>,
    o2: &DMatrix<f64>,
    cx: &Ctx,
) -> SampleOut {
    let (q, m, h, nf) = (cx.q, cx.m, cx.h, cx.nf);
    let lam2 = 2.0 * cx.lambda;

    // Metric.
    let theta = rows(ow.column(0).as_slice(), q, q);
    let dtheta: Vec<_> = (0..nf).map(|d| rows(ow.column(1 + d).as_slice(), q, q)).collect();
    let w = gram_plus_floor(&theta, cx.floor);
    let dw: Vec<_> = dtheta
        .iter()
        .map(|dt| {
            let x = dt.tr_mul(&theta);
            &x + x.transpose()
        })
        .collect();
    let Ok(mm) = spd_inverse(&w) else {
        let terms = LossTerms { lpd_r1: f64::NAN, ..LossTerms::default() };
        return SampleOut {
            terms,
            cot_w: DMatrix::zeros(ow.nrows(), ow.ncols()),
            cot_k1: DMatrix::zeros(o1.nrows(), o1.ncols()),
            cot_k2: DMatrix::zeros(o2.nrows(), o2.ncols()),
            alpha_bar: 0.0,
            mu_bar: 0.0,
        };
    };

    // Controller and its tangent-space Jacobian K S.
    let k1 = rows(o1.column(0).as_slice(), m, h);
    let k2 = rows(o2.column(0).as_slice(), h, q);
    let t = (&k2 * &fz.err).map(f64::tanh);
    let sg = t.map(|v| 1.0 - v * v);
    let mut ks = DMatrix::zeros(m, q);
    let mut dk1 = Vec::with_capacity(q);
    let mut gs = Vec::with_capacity(q);
    for j in 0..q {
        let d1 = rows(o1.column(1 + j).as_slice(), m, h);
        let d2 = rows(o2.column(1 + j).as_slice(), h, q);
        let g = d2 * &fz.err + &k2 * fz.eta.column(j);
        ks.set_column(j, &(&d1 * &t + &k1 * sg.component_mul(&g)));
        dk1.push(d1);
        gs.push(g);
    }
    let u = u_star + &k1 * &t;

    // Field weights: ẋ = f + Σ u_i b_i + Σ w_j b_w,j.
    let coef: Vec<f64> = std::iter::once(1.0).chain(u.iter().copied()).chain(fz.w.iter().copied()).take(nf).collect();
    let mut w_dot = DMatrix::zeros(q, q);
    let mut a_scr = &fz.ef.e * &ks;
    for d in 0..nf {
        w_dot += &dw[d] * coef[d];
        a_scr += &fz.sv[d] * coef[d];
    }
    let m_dot = -(&mm * &w_dot * &mm);
    let ma = &mm * &a_scr;
    let t11 = &m_dot + &ma + ma.transpose() + &mm * lam2;

    let mut terms = LossTerms::default();
    let mut m_bar = DMatrix::zeros(q, q);
    let mut w_bar = DMatrix::zeros(q, q);
    let mut dw_bar = vec![DMatrix::zeros(q, q); nf];
    let mut ks_bar = DMatrix::zeros(m, q);
    let mut u_bar = DVector::zeros(m);
    let mut alpha_bar = 0.0;
    let mut mu_bar = 0.0;

    let t11_bar = match cx.mode {
        Mode::Ccm => {
            let (v, adj) = lpd_with_adjoint(&-&t11, &cx.dirs.r1);
            terms.lpd_r1 = v;
            -adj
        }
        Mode::Rccm => {
            let e_w = &fz.ef.e_w;
            let p = e_w.ncols();
            let mut r1 = DMatrix::zeros(q + p, q + p);
            r1.view_mut((0, 0), (q, q)).copy_from(&t11);
            let mew = &mm * e_w;
            r1.view_mut((0, q), (q, p)).copy_from(&mew);
            r1.view_mut((q, 0), (p, q)).copy_from(&mew.transpose());
            r1.view_mut((q, q), (p, p)).fill_diagonal(-cx.mu);
            let (v, adj) = lpd_with_adjoint(&-r1, &cx.dirs.r1);
            terms.lpd_r1 = v;
            let r1_bar = -adj;
            m_bar += r1_bar.view((0, q), (q, p)) * e_w.transpose() + e_w * r1_bar.view((q, 0), (p, q));
            mu_bar -= r1_bar.view((q, q), (p, p)).trace();

            let cc = &fz.cs + &fz.d * &ks;
            let ctc = cc.tr_mul(&cc);
            let mut r2 = DMatrix::zeros(q + p, q + p);
            r2.view_mut((0, 0), (q, q)).copy_from(&(&mm * lam2 - &ctc / cx.alpha));
            r2.view_mut((q, q), (p, p)).fill_diagonal(cx.alpha - cx.mu);
            let (v, b) = lpd_with_adjoint(&r2, &cx.dirs.r2);
            terms.lpd_r2 = v;
            let b11 = b.view((0, 0), (q, q)).into_owned();
            let b22 = b.view((q, q), (p, p)).trace();
            m_bar += &b11 * lam2;
            let cc_bar = -(&cc * (&b11 + b11.transpose())) / cx.alpha;
            ks_bar += fz.d.tr_mul(&cc_bar);
            alpha_bar += inner(&b11, &ctc) / (cx.alpha * cx.alpha) + b22;
            mu_bar -= b22;

            if cx.alpha > cx.alpha_floor {
                terms.relu_alpha = cx.alpha - cx.alpha_floor;
                alpha_bar += 1.0;
            }
            r1_bar.view((0, 0), (q, q)).into_owned()
        }
    };

    // Through T11 = Ṁ + M𝒜 + 𝒜ᵀM + 2λM.
    m_bar += &t11_bar * a_scr.transpose() + &a_scr * &t11_bar + &t11_bar * lam2;
    let a_bar = &mm * (&t11_bar + t11_bar.transpose());
    let wdot_bar = -(&mm * &t11_bar * &mm);
    m_bar -= &t11_bar * &mm * &w_dot + &w_dot * &mm * &t11_bar;
    ks_bar += fz.ef.e.tr_mul(&a_bar);
    for i in 0..m {
        u_bar[i] += inner(&a_bar, &fz.sv[1 + i]) + inner(&wdot_bar, &dw[1 + i]);
    }
    for d in 0..nf {
        dw_bar[d] += &wdot_bar * coef[d];
    }

    // Killing-type conditions along each field.
    let ep = &fz.ef.e_perp;
    for d in 0..nf {
        let rate = if d == 0 { lam2 } else { 0.0 };
        let svw = &fz.sv[d] * &w;
        let x = -&dw[d] + &svw + svw.transpose() + &w * rate;
        let c = ep.transpose() * &x * ep;
        let c_bar = if d == 0 {
            let (v, adj) = lpd_with_adjoint(&-c, &cx.dirs.c1);
            terms.lpd_c1 = v;
            -adj
        } else {
            let n = c.norm();
            if d <= m {
                terms.frob_c2 += n;
            } else {
                terms.frob_c3 += n;
            }
            if n > 0.0 {
                c / n
            } else {
                c
            }
        };
        let x_bar = ep * c_bar * ep.transpose();
        dw_bar[d] -= &x_bar;
        w_bar += fz.sv[d].tr_mul(&x_bar) + &x_bar * &fz.sv[d] + &x_bar * rate;
    }

    // W ⪯ m̲⁻¹ I.
    let bound = DMatrix::identity(q, q) * cx.bound - &w;
    let (v, adj) = lpd_with_adjoint(&bound, &cx.dirs.bound);
    terms.lpd_bound = v;
    w_bar -= adj;

    // M = W⁻¹, W = ΘᵀΘ + floor, ∂W = ∂Θᵀ Θ + Θᵀ ∂Θ.
    w_bar -= &mm * &m_bar * &mm;
    let mut theta_bar = &theta * (&w_bar + w_bar.transpose());
    let mut cot_w = DMatrix::zeros(ow.nrows(), ow.ncols());
    for d in 0..nf {
        let s = &dw_bar[d] + dw_bar[d].transpose();
        put_rows(&mut cot_w, 1 + d, &(&theta * &s));
        theta_bar += &dtheta[d] * s;
    }
    put_rows(&mut cot_w, 0, &theta_bar);

    // Controller: u = u* + K₁ t, t = tanh(K₂ ε), (KS)_j = ∂K₁_j t + K₁ (s ⊙ g_j).
    let mut k1_bar = &u_bar * t.transpose();
    let mut t_bar = k1.tr_mul(&u_bar);
    let mut k2_bar = DMatrix::zeros(h, q);
    let mut sg_bar = DVector::zeros(h);
    let mut cot_k1 = DMatrix::zeros(o1.nrows(), o1.ncols());
    let mut cot_k2 = DMatrix::zeros(o2.nrows(), o2.ncols());
    for j in 0..q {
        let kappa = ks_bar.column(j);
        put_rows(&mut cot_k1, 1 + j, &(kappa * t.transpose()));
        t_bar += dk1[j].tr_mul(&kappa);
        k1_bar += kappa * sg.component_mul(&gs[j]).transpose();
        let y = k1.tr_mul(&kappa);
        sg_bar += y.component_mul(&gs[j]);
        let g_bar = sg.component_mul(&y);
        put_rows(&mut cot_k2, 1 + j, &(&g_bar * fz.err.transpose()));
        k2_bar += &g_bar * fz.eta.column(j).transpose();
    }
    t_bar -= (t.component_mul(&sg_bar)) * 2.0;
    let a_vec_bar = sg.component_mul(&t_bar);
    k2_bar += a_vec_bar * fz.err.transpose();
    put_rows(&mut cot_k1, 0, &k1_bar);
    put_rows(&mut cot_k2, 0, &k2_bar);

    SampleOut { terms, cot_w, cot_k1, cot_k2, alpha_bar, mu_bar }
}

fn chunk_pass<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    samples: &[TrainSample],
    cx: &Ctx,
) -> crate::Result<BatchGradient> {
    let (q, nf) = (cx.q, cx.nf);
    let n = samples[0].x.len();
    let frozen: Vec<Frozen> = samples.iter().map(|s| freeze(model, s, cx.mode)).collect();
    let bw = 1 + nf;
    let bk = 1 + q;
    let mut in_w = DMatrix::zeros(n, samples.len() * bw);
    let mut in_k = DMatrix::zeros(2 * n, samples.len() * bk);
    for (i, (s, fz)) in samples.iter().zip(&frozen).enumerate() {
        in_w.column_mut(i * bw).copy_from(&s.x);
        in_w.view_mut((0, i * bw + 1), (n, nf)).copy_from(&fz.fields);
        in_k.column_mut(i * bk).copy_from(&concat(&s.x, &s.x_star));
        in_k.view_mut((0, i * bk + 1), (n, q)).copy_from(&fz.s);
    }
    let tr_w = cert.theta_w.forward_batch(&in_w, bw)?;
    let tr_1 = cert.theta_k1.forward_batch(&in_k, bk)?;
    let tr_2 = cert.theta_k2.forward_batch(&in_k, bk)?;
    let mut cot_w = DMatrix::zeros(tr_w.output.nrows(), tr_w.output.ncols());
    let mut cot_1 = DMatrix::zeros(tr_1.output.nrows(), tr_1.output.ncols());
    let mut cot_2 = DMatrix::zeros(tr_2.output.nrows(), tr_2.output.ncols());
    let mut out = BatchGradient { loss: 0.0, terms: LossTerms::default(), grad: Vec::new(), non_finite: None };
    let (mut ga, mut gm) = (0.0, 0.0);
    for (i, (s, fz)) in samples.iter().zip(&frozen).enumerate() {
        let r = sample_pass(
            fz,
            &s.u_star,
            &tr_w.output.columns(i * bw, bw).into_owned(),
            &tr_1.output.columns(i * bk, bk).into_owned(),
            &tr_2.output.columns(i * bk, bk).into_owned(),
            cx,
        );
        if out.non_finite.is_none() {
            out.non_finite = r.terms.non_finite().map(|t| (i, t));
        }
        out.loss += r.terms.total();
        out.terms.add(&r.terms);
        cot_w.columns_mut(i * bw, bw).copy_from(&r.cot_w);
        cot_1.columns_mut(i * bk, bk).copy_from(&r.cot_k1);
        cot_2.columns_mut(i * bk, bk).copy_from(&r.cot_k2);
        ga += r.alpha_bar;
        gm += r.mu_bar;
    }
    let mut g_w = Mlp::zeros(&cert.theta_w.widths());
    let mut g_1 = Mlp::zeros(&cert.theta_k1.widths());
    let mut g_2 = Mlp::zeros(&cert.theta_k2.widths());
    cert.theta_w.backward_batch(&tr_w, &cot_w, &mut g_w);
    cert.theta_k1.backward_batch(&tr_1, &cot_1, &mut g_1);
    cert.theta_k2.backward_batch(&tr_2, &cot_2, &mut g_2);
    let grads = NeuralCertificate {
        theta_w: g_w,
        theta_k1: g_1,
        theta_k2: g_2,
        theta_alpha: ga * sigmoid(cert.theta_alpha),
        theta_mu: gm * sigmoid(cert.theta_mu),
        hyper: cert.hyper,
    };
    out.grad = vec![0.0; cert.num_params()];
    grads.write_params(&mut out.grad);
    Ok(out)
}

/// Summed loss and gradient over `samples`, evaluated in fixed chunks whose partial sums are
/// combined in chunk order (bit-identical for any thread count).
pub fn loss_and_gradient<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    samples: &[TrainSample],
    dirs: &Directions,
    mode: Mode,
    exec: Execution,
) -> crate::Result<BatchGradient> {
    let (_, q, m, h) = cert.shape()?;
    let dims = model.dims();
    let nf = 1 + m + if mode == Mode::Rccm { dims.p } else { 0 };
    let cx = Ctx {
        q,
        m,
        h,
        nf,
        lambda: cert.hyper.lambda,
        alpha: cert.alpha(),
        mu: cert.mu(),
        floor: 1.0 / cert.hyper.m_upper,
        bound: 1.0 / cert.hyper.m_lower,
        alpha_floor: cert.hyper.alpha_floor,
        mode,
        dirs,
    };
    let n_chunks = samples.len().div_ceil(CHUNK);
    let parts = exec.map(n_chunks, |c| {
        let lo = c * CHUNK;
        chunk_pass(model, cert, &samples[lo..(lo + CHUNK).min(samples.len())], &cx)
    });
    let mut total = BatchGradient { loss: 0.0, terms: LossTerms::default(), grad: vec![0.0; cert.num_params()], non_finite: None };
    for (c, part) in parts.into_iter().enumerate() {
        let part = part?;
        total.loss += part.loss;
        total.terms.add(&part.terms);
        for (a, b) in total.grad.iter_mut().zip(&part.grad) {
            *a += b;
        }
        if total.non_finite.is_none() {
            total.non_finite = part.non_finite.map(|(i, t)| (c * CHUNK + i, t));
        }
    }
    Ok(total)
}
