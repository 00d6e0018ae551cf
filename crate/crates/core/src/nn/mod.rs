//! Tanh MLPs with exact forward-mode tangents and reverse-mode parameter gradients, and
//! the neural certificate built from them.

mod certificate;
mod mlp;
pub mod weights;

pub use certificate::{sigmoid, softplus, softplus_inv, Hyper, NeuralCertificate};
pub(crate) use certificate::{concat, gram_plus_floor, spd_inverse};
pub use mlp::{BatchTrace, DualVector, Layer, Mlp};
