use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::batch::loss_and_gradient;
use super::{sample_training_set, Directions, TrainConfig, TrainSample};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::nn::NeuralCertificate;
use crate::rng::{stream, Stream};
use crate::system::ControlAffineModel;

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(rename = "lpd_R1")]
    pub lpd_r1: f64,
    #[serde(rename = "lpd_R2")]
    pub lpd_r2: f64,
    #[serde(rename = "lpd_C1")]
    pub lpd_c1: f64,
    #[serde(rename = "frob_C2")]
    pub frob_c2: f64,
    #[serde(rename = "frob_C3")]
    pub frob_c3: f64,
    pub lpd_bound: f64,
    pub relu_alpha: f64,
    pub alpha: f64,
    pub mu: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub cert: NeuralCertificate,
    pub log: Vec<EpochLog>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains a fresh certificate on `config.n_samples` quadrotor-box samples.
pub fn train<S: ControlAffineModel + ?Sized>(
    model: &S,
    config: &TrainConfig,
    exec: Execution,
    progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = model.dims();
    let cert = NeuralCertificate::new(dims, config.h_k, &config.hidden, config.hyper, &mut stream(config.seed, Stream::Init));
    let samples = sample_training_set(config, &mut stream(config.seed, Stream::Samples));
    train_with(model, cert, &samples, config, exec, progress)
}

/// Adam on the mean per-sample loss, reshuffling every epoch and redrawing the penalty
/// directions every batch. Aborts on the first non-finite loss term.
pub fn train_with<S: ControlAffineModel + ?Sized>(
    model: &S,
    mut cert: NeuralCertificate,
    samples: &[TrainSample],
    config: &TrainConfig,
    exec: Execution,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let (_, q, m, _) = cert.shape()?;
    let dims = model.dims();
    let q_perp = q - m;
    let mut shuffle_rng = stream(config.seed, Stream::Shuffle);
    let mut dir_rng = stream(config.seed, Stream::Directions);
    let mut params = vec![0.0; cert.num_params()];
    cert.write_params(&mut params);
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = super::LossTerms::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let dirs = Directions::sample(&mut dir_rng, q, dims.p, q_perp, config.lpd_directions, config.mode);
            let g = loss_and_gradient(model, &cert, &batch, &dirs, config.mode, exec)?;
            if let Some((i, term)) = g.non_finite {
                return Err(Error::NonFiniteLoss { term: term.to_string(), sample: chunk[i], epoch });
            }
            sum.add(&g.terms);
            let scale = 1.0 / batch.len() as f64;
            let grad: Vec<f64> = g.grad.iter().map(|v| v * scale).collect();
            adam.step(&mut params, &grad);
            cert.read_params(&params);
        }
        let mean = sum.scaled(1.0 / samples.len() as f64);
        let row = EpochLog {
            epoch,
            mean_loss: mean.total(),
            lpd_r1: mean.lpd_r1,
            lpd_r2: mean.lpd_r2,
            lpd_c1: mean.lpd_c1,
            frob_c2: mean.frob_c2,
            frob_c3: mean.frob_c3,
            lpd_bound: mean.lpd_bound,
            relu_alpha: mean.relu_alpha,
            alpha: cert.alpha(),
            mu: cert.mu(),
        };
        progress(&row);
        log.push(row);
    }
    Ok(TrainOutcome { cert, log })
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
