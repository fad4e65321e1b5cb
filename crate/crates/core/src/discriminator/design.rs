//! The discriminator designs compared in the ablation, each wrapping one or
//! two networks and adapting them to a discriminator loss and a generator
//! adversarial loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Var};
use crate::discriminator::network::{DiscBinding, DiscConfig, Discriminator};
use crate::error::{Error, Result};
use crate::losses::{self, adv_gen_loss, disc_loss_global, out_bands, outpainting_loss};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// No discriminator; reconstruction-only fine-tuning.
    None,
    /// Whole video in, final logits only (T-PatchGAN).
    GlobalTpatch,
    /// Band columns only in, final logits only.
    PartialOnly,
    /// Independent global and partial discriminators, losses averaged.
    GlobalAndPartial,
    /// Whole video in, loss on local features only.
    LocalOnly,
    /// Local and global features under the outpainting loss.
    Hierarchical,
}

impl DesignKind {
    /// Ablation table row order.
    pub const ALL: [DesignKind; 6] = [
        DesignKind::None,
        DesignKind::GlobalTpatch,
        DesignKind::PartialOnly,
        DesignKind::GlobalAndPartial,
        DesignKind::LocalOnly,
        DesignKind::Hierarchical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::None => "none",
            DesignKind::GlobalTpatch => "global_tpatch",
            DesignKind::PartialOnly => "partial_only",
            DesignKind::GlobalAndPartial => "global_and_partial",
            DesignKind::LocalOnly => "local_only",
            DesignKind::Hierarchical => "hierarchical",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DesignKind::None => "None",
            DesignKind::GlobalTpatch => "Global (T-PatchGAN)",
            DesignKind::PartialOnly => "Partial-only",
            DesignKind::GlobalAndPartial => "Global & partial",
            DesignKind::LocalOnly => "Local-only",
            DesignKind::Hierarchical => "Hierarchical",
        }
    }

    /// Whether the loss restricts local features to the bands at feature resolution.
    pub fn uses_feature_bands(self) -> bool {
        matches!(self, DesignKind::LocalOnly | DesignKind::Hierarchical)
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DesignKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown design `{s}` (expected one of {})",
                    DesignKind::ALL.map(|k| k.as_str()).join(", ")
                ))
            })
    }
}

/// Discriminator-side loss and whichever outpainting-loss terms the design has.
#[derive(Clone, Copy, Debug)]
pub struct DiscLoss {
    pub total: Var,
    pub real_local: Option<Var>,
    pub real_global: Option<Var>,
    pub fake_local: Option<Var>,
    pub fake_global: Option<Var>,
}

impl DiscLoss {
    fn plain(total: Var) -> Self {
        Self {
            total,
            real_local: None,
            real_global: None,
            fake_local: None,
            fake_global: None,
        }
    }
}

/// One experiment's discriminator(s) plus the loss adapters for its design.
#[derive(Clone, Debug)]
pub struct Design<T: Scalar> {
    kind: DesignKind,
    discs: Vec<Discriminator<T>>,
    alpha_local: f64,
    alpha_global: f64,
    adv_literal: bool,
}

impl<T: Scalar> Design<T> {
    pub fn build<R: Rng + ?Sized>(
        kind: DesignKind,
        config: &DiscConfig,
        alpha_local: f64,
        alpha_global: f64,
        adv_literal: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let discs = match kind {
            DesignKind::None => Vec::new(),
            DesignKind::GlobalTpatch | DesignKind::PartialOnly | DesignKind::Hierarchical => {
                vec![Discriminator::new(config.clone(), "disc", rng)?]
            }
            DesignKind::LocalOnly => {
                vec![Discriminator::new(config.clone().without_fcm(), "disc", rng)?]
            }
            DesignKind::GlobalAndPartial => vec![
                Discriminator::new(config.clone(), "disc_global", rng)?,
                Discriminator::new(config.clone(), "disc_partial", rng)?,
            ],
        };
        if kind != DesignKind::None && kind != DesignKind::LocalOnly && config.fcm_layers.is_empty()
        {
            return Err(Error::Config(format!("design {kind} needs FCM layers")));
        }
        Ok(Self {
            kind,
            discs,
            alpha_local,
            alpha_global,
            adv_literal,
        })
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn discriminators(&self) -> &[Discriminator<T>] {
        &self.discs
    }

    pub fn discriminators_mut(&mut self) -> &mut [Discriminator<T>] {
        &mut self.discs
    }

    pub fn refresh_spectral(&mut self) {
        self.discs.iter_mut().for_each(|d| d.refresh_spectral());
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<Vec<DiscBinding>> {
        self.discs.iter().map(|d| d.bind(g, trainable)).collect()
    }

    /// Final logits of discriminator `i` on `video`, cropping to the bands for partial inputs.
    fn logits(
        &self,
        g: &mut Graph<T>,
        b: &[DiscBinding],
        i: usize,
        video: Var,
        partial: bool,
        ratio: f64,
    ) -> Result<Var> {
        let input = if partial {
            out_bands(g, video, ratio)?
        } else {
            video
        };
        Ok(self.discs[i].features(g, &b[i], input)?.global)
    }

    /// Loss minimized by the discriminator(s); `None` for the no-discriminator design.
    pub fn disc_loss(
        &self,
        g: &mut Graph<T>,
        b: &[DiscBinding],
        real: Var,
        fake: Var,
        ratio: f64,
    ) -> Result<Option<DiscLoss>> {
        let loss = match self.kind {
            DesignKind::None => return Ok(None),
            DesignKind::GlobalTpatch | DesignKind::PartialOnly => {
                let partial = self.kind == DesignKind::PartialOnly;
                let xr = self.logits(g, b, 0, real, partial, ratio)?;
                let xf = self.logits(g, b, 0, fake, partial, ratio)?;
                DiscLoss::plain(disc_loss_global(g, xr, xf)?)
            }
            DesignKind::GlobalAndPartial => {
                let gr = self.logits(g, b, 0, real, false, ratio)?;
                let gf = self.logits(g, b, 0, fake, false, ratio)?;
                let pr = self.logits(g, b, 1, real, true, ratio)?;
                let pf = self.logits(g, b, 1, fake, true, ratio)?;
                let lg = disc_loss_global(g, gr, gf)?;
                let lp = disc_loss_global(g, pr, pf)?;
                let half = T::of(0.5);
                DiscLoss::plain(g.weighted_sum(&[(lg, half), (lp, half)])?)
            }
            DesignKind::LocalOnly => {
                let xl = self.discs[0].fem_forward(g, &b[0], real)?;
                let zl = self.discs[0].fem_forward(g, &b[0], fake)?;
                let zb = out_bands(g, zl, ratio)?;
                let real_local = losses::hinge_real(g, xl);
                let fake_local = losses::hinge_fake(g, zb);
                DiscLoss {
                    total: g.add(real_local, fake_local)?,
                    real_local: Some(real_local),
                    fake_local: Some(fake_local),
                    real_global: None,
                    fake_global: None,
                }
            }
            DesignKind::Hierarchical => {
                let x = self.discs[0].features(g, &b[0], real)?;
                let z = self.discs[0].features(g, &b[0], fake)?;
                let t = outpainting_loss(g, &x, &z, ratio, self.alpha_local, self.alpha_global)?;
                DiscLoss {
                    total: t.total,
                    real_local: Some(t.real_local),
                    real_global: Some(t.real_global),
                    fake_local: Some(t.fake_local),
                    fake_global: Some(t.fake_global),
                }
            }
        };
        Ok(Some(loss))
    }

    /// Adversarial term of the generator loss; `None` for the no-discriminator design.
    pub fn gen_adv(
        &self,
        g: &mut Graph<T>,
        b: &[DiscBinding],
        fake: Var,
        ratio: f64,
    ) -> Result<Option<Var>> {
        let lit = self.adv_literal;
        let adv = match self.kind {
            DesignKind::None => return Ok(None),
            DesignKind::GlobalTpatch | DesignKind::PartialOnly | DesignKind::Hierarchical => {
                let partial = self.kind == DesignKind::PartialOnly;
                let z = self.logits(g, b, 0, fake, partial, ratio)?;
                adv_gen_loss(g, z, lit)
            }
            DesignKind::GlobalAndPartial => {
                let zg = self.logits(g, b, 0, fake, false, ratio)?;
                let zp = self.logits(g, b, 1, fake, true, ratio)?;
                let ag = adv_gen_loss(g, zg, lit);
                let ap = adv_gen_loss(g, zp, lit);
                let half = T::of(0.5);
                g.weighted_sum(&[(ag, half), (ap, half)])?
            }
            DesignKind::LocalOnly => {
                let zl = self.discs[0].fem_forward(g, &b[0], fake)?;
                let zb = out_bands(g, zl, ratio)?;
                adv_gen_loss(g, zb, lit)
            }
        };
        Ok(Some(adv))
    }
}
