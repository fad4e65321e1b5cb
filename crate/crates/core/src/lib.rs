//! Video outpainting with a hierarchical spatio-temporal discriminator.
//!
//! The discriminator is split into a feature-extraction module (FEM) whose
//! output columns see only a narrow horizontal neighbourhood, and a feature
//! comparison module (FCM) stacked on top with a frame-wide receptive field.
//! The outpainting loss scores the FEM output only on the generated bands and
//! the FCM output on the whole frame.

pub mod ablation;
pub mod diffcore;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod synthdata;
pub mod tensor;
pub mod tensorio;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
pub use tensorio::{Space, VideoTensor};
