//! Two-stage spatio-temporal discriminator: a feature extraction module (FEM)
//! whose small receptive field judges local quality, followed by a feature
//! comparison module (FCM) whose logits see the whole clip.

mod design;
mod network;
mod rf;

pub use design::{Design, DesignKind, DiscLoss};
pub use network::{DiscBinding, DiscConfig, Discriminator};
pub use rf::{empirical_rf, empirical_rf_at, receptive_field, rf_plan, RfLayer, RfPlan};
