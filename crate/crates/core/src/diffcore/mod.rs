//! Differentiable operations, parameters and the optimizer.

mod adam;
mod conv;
pub mod gradcheck;
mod graph;
mod params;
mod spectral;

pub use adam::{adam_step, AdamConfig, AdamState, DEFAULT_LR};
pub use conv::Conv3dSpec;
pub(crate) use graph::bilinear;
pub use graph::{Grads, Graph, Var};
pub use params::{Bound, Param, ParamSet};
pub use spectral::{estimate_sigma, power_iterate, spectral_normalize, SpectralState, SIGMA_EPS};
