use serde::{Deserialize, Serialize};

use super::{residuals, Mode, SamplingBoxes, TrainSample};
use crate::error::Result;
use crate::exec::Execution;
use crate::nn::NeuralCertificate;
use crate::rng::{stream, Stream};
use crate::system::ControlAffineModel;

/// Eigenvalues within this distance of zero on the wrong side are not counted as violations.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationCounts {
    #[serde(rename = "R1")]
    pub r1: usize,
    #[serde(rename = "R2")]
    pub r2: usize,
    #[serde(rename = "C1")]
    pub c1: usize,
}

/// Worst-case values over the checked samples. R2 and C3 entries are absent in CCM mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstValues {
    #[serde(rename = "R1_max_eig")]
    pub r1_max_eig: f64,
    #[serde(rename = "R2_min_eig")]
    pub r2_min_eig: Option<f64>,
    #[serde(rename = "C1_max_eig")]
    pub c1_max_eig: f64,
    #[serde(rename = "C2_frob_max")]
    pub c2_frob_max: f64,
    #[serde(rename = "C3_frob_max")]
    pub c3_frob_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub n_check: usize,
    pub seed: u64,
    pub violations: ViolationCounts,
    pub worst: WorstValues,
    pub alpha: f64,
    pub mu: f64,
}

impl VerifyReport {
    /// Largest per-condition violation fraction.
    pub fn max_violation_fraction(&self) -> f64 {
        let v = &self.violations;
        v.r1.max(v.r2).max(v.c1) as f64 / self.n_check.max(1) as f64
    }
}

/// Per-sample extreme eigenvalues and norms.
#[derive(Clone, Copy, Debug)]
struct Check {
    r1_max: f64,
    r2_min: Option<f64>,
    c1_max: f64,
    c2_max: f64,
    c3_max: Option<f64>,
}

fn max_eig(a: &nalgebra::DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.clone().symmetric_eigen().eigenvalues.max()
}

fn check_one<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    s: &TrainSample,
    mode: Mode,
) -> Result<Check> {
    let r = residuals(model, cert, s, mode)?;
    let fro = |v: &[nalgebra::DMatrix<f64>]| v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(Check {
        r1_max: max_eig(&r.r1),
        r2_min: r.r2.map(|r2| -max_eig(&-r2)),
        c1_max: max_eig(&r.c.c1),
        c2_max: fro(&r.c.c2),
        c3_max: (mode == Mode::Rccm).then(|| fro(&r.c.c3)),
    })
}

/// Exact symmetric eigenvalue check of R1 ⪯ 0, R2 ⪰ 0 and C1 ⪯ 0 on the given samples.
/// Returns the per-condition counts, the worst values and the number of samples that
/// violate at least one condition.
pub fn verify_samples<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    samples: &[TrainSample],
    mode: Mode,
    exec: Execution,
) -> Result<(ViolationCounts, WorstValues, usize)> {
    let checks = exec.map(samples.len(), |i| check_one(model, cert, &samples[i], mode));
    let mut counts = ViolationCounts::default();
    let mut worst = WorstValues {
        r1_max_eig: f64::NEG_INFINITY,
        r2_min_eig: None,
        c1_max_eig: f64::NEG_INFINITY,
        c2_frob_max: 0.0,
        c3_frob_max: None,
    };
    let mut any = 0;
    for c in checks {
        let c = c?;
        let v1 = c.r1_max > VIOLATION_TOL;
        let v2 = c.r2_min.is_some_and(|e| e < -VIOLATION_TOL);
        let v3 = c.c1_max > VIOLATION_TOL;
        counts.r1 += v1 as usize;
        counts.r2 += v2 as usize;
        counts.c1 += v3 as usize;
        any += (v1 || v2 || v3) as usize;
        worst.r1_max_eig = worst.r1_max_eig.max(c.r1_max);
        worst.c1_max_eig = worst.c1_max_eig.max(c.c1_max);
        worst.c2_frob_max = worst.c2_frob_max.max(c.c2_max);
        if let Some(e) = c.r2_min {
            worst.r2_min_eig = Some(worst.r2_min_eig.map_or(e, |w| w.min(e)));
        }
        if let Some(e) = c.c3_max {
            worst.c3_frob_max = Some(worst.c3_frob_max.map_or(e, |w| w.max(e)));
        }
    }
    Ok((counts, worst, any))
}

/// Draws `n_check` fresh samples from `boxes` (seeded stream independent of training) and
/// checks them.
pub fn verify<S: ControlAffineModel + ?Sized>(
    model: &S,
    cert: &NeuralCertificate,
    boxes: &SamplingBoxes,
    n_check: usize,
    seed: u64,
    mode: Mode,
    exec: Execution,
) -> Result<VerifyReport> {
    let mut rng = stream(seed, Stream::Verify);
    let samples: Vec<TrainSample> = (0..n_check).map(|_| boxes.sample(&mut rng)).collect();
    let (violations, worst, _) = verify_samples(model, cert, &samples, mode, exec)?;
    Ok(VerifyReport { n_check, seed, violations, worst, alpha: cert.alpha(), mu: cert.mu() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::assemble::tests::hand_certificate;
    use crate::nn::{Hyper, Mlp};
    use crate::system::{Quadrotor, ScalarLinear};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_system_has_no_violations() {
        let sys = ScalarLinear::default();
        let c = hand_certificate();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples: Vec<TrainSample> = (0..100)
            .map(|_| {
                let mut v = || DVector::from_element(1, rng.random_range(-2.0..2.0));
                TrainSample { x: v(), x_star: v(), u_star: v(), w: v() }
            })
            .collect();
        let (counts, worst, any) = verify_samples(&sys, &c, &samples, Mode::Rccm, Execution::Sequential).unwrap();
        assert_eq!(counts, ViolationCounts::default());
        assert_eq!(any, 0);
        assert!((worst.r1_max_eig - 0.0).abs() < 1e-12);
        assert!(worst.r2_min_eig.unwrap().abs() < 1e-12);
    }

    #[test]
    fn untrained_certificate_fails() {
        let q = Quadrotor::default();
        let mut c = NeuralCertificate::new(q.dims(), 45, &[16, 16], Hyper::default(), &mut ChaCha8Rng::seed_from_u64(1));
        c.theta_w = Mlp::zeros(&c.theta_w.widths());
        c.theta_k1 = Mlp::zeros(&c.theta_k1.widths());
        let r = verify(&q, &c, &SamplingBoxes::default(), 64, 2, Mode::Rccm, Execution::Sequential).unwrap();
        assert!(r.violations.r1 + r.violations.r2 + r.violations.c1 > 0);
        assert_eq!(r.alpha, c.alpha());
        let json: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["R1", "R2", "C1"] {
            assert!(json["violations"][key].is_u64());
        }
        for key in ["R1_max_eig", "R2_min_eig", "C1_max_eig", "C2_frob_max", "C3_frob_max"] {
            assert!(json["worst"][key].is_f64(), "{key}");
        }
    }

    /// Real roots of the monic cubic `t³ + a t² + b t + c` with three real roots.
    fn cubic_roots(a: f64, b: f64, c: f64) -> [f64; 3] {
        let p = b - a * a / 3.0;
        let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
        let r = 2.0 * (-p / 3.0).sqrt();
        let phi = ((3.0 * q / (p * r)).clamp(-1.0, 1.0)).acos() / 3.0;
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - a / 3.0;
        }
        out.sort_by(f64::total_cmp);
        out
    }

    #[test]
    fn eigenvalues_match_characteristic_polynomial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let a = &g + g.transpose();
            let tr = a.trace();
            let minors = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)] + a[(0, 0)] * a[(2, 2)] - a[(0, 2)] * a[(2, 0)]
                + a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)];
            let roots = cubic_roots(-tr, minors, -a.determinant());
            let mut eig: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            for (x, y) in eig.iter().zip(roots) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }
}
