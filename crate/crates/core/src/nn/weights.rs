//! JSON weights file: `{format_version, hyper, theta_alpha, theta_mu, networks}` with each
//! network stored as `{widths, layers: [{weights, bias}]}` and weight matrices row-major.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::certificate::{Hyper, NeuralCertificate};
use super::mlp::{Layer, Mlp};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetFile {
    widths: Vec<usize>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Networks {
    theta_w: NetFile,
    theta_k1: NetFile,
    theta_k2: NetFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    format_version: u32,
    hyper: Hyper,
    theta_alpha: f64,
    theta_mu: f64,
    networks: Networks,
}

fn net_to_file(net: &Mlp) -> NetFile {
    NetFile {
        widths: net.widths(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerFile {
                weights: l.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
                bias: l.bias.iter().copied().collect(),
            })
            .collect(),
    }
}

fn net_from_file(f: NetFile, name: &str) -> Result<Mlp> {
    if f.widths.len() != f.layers.len() + 1 {
        return Err(Error::Weights(format!("{name}: widths do not match layer count")));
    }
    let mut layers = Vec::with_capacity(f.layers.len());
    for (i, l) in f.layers.into_iter().enumerate() {
        let (rows, cols) = (f.widths[i + 1], f.widths[i]);
        if l.weights.len() != rows || l.weights.iter().any(|r| r.len() != cols) || l.bias.len() != rows {
            return Err(Error::Weights(format!("{name}: layer {i} has inconsistent shape")));
        }
        let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
        layers.push(Layer {
            weights: DMatrix::from_row_slice(rows, cols, &flat),
            bias: DVector::from_vec(l.bias),
        });
    }
    Mlp::from_layers(layers).map_err(|e| Error::Weights(format!("{name}: {e}")))
}

pub fn to_json(cert: &NeuralCertificate) -> Result<String> {
    let file = WeightsFile {
        format_version: FORMAT_VERSION,
        hyper: cert.hyper,
        theta_alpha: cert.theta_alpha,
        theta_mu: cert.theta_mu,
        networks: Networks {
            theta_w: net_to_file(&cert.theta_w),
            theta_k1: net_to_file(&cert.theta_k1),
            theta_k2: net_to_file(&cert.theta_k2),
        },
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn from_json(text: &str) -> Result<NeuralCertificate> {
    let file: WeightsFile = serde_json::from_str(text).map_err(|e| Error::Weights(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Weights(format!("unsupported format_version {}", file.format_version)));
    }
    let h = file.hyper;
    if !(h.m_lower > 0.0 && h.m_upper > 0.0 && h.lambda > 0.0 && h.alpha_floor >= 0.0) {
        return Err(Error::Weights("hyperparameters must be positive".into()));
    }
    let cert = NeuralCertificate {
        theta_w: net_from_file(file.networks.theta_w, "theta_w")?,
        theta_k1: net_from_file(file.networks.theta_k1, "theta_k1")?,
        theta_k2: net_from_file(file.networks.theta_k2, "theta_k2")?,
        theta_alpha: file.theta_alpha,
        theta_mu: file.theta_mu,
        hyper: file.hyper,
    };
    cert.shape()?;
    Ok(cert)
}

pub fn save(cert: &NeuralCertificate, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(cert)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<NeuralCertificate> {
    from_json(&std::fs::read_to_string(path)?)
}
