//! Training objectives: hinge discriminator losses, the outpainting loss over
//! local and global discriminator features, the generator adversarial loss,
//! band/center reconstruction losses and their weighted total.
//!
//! Every expectation is an arithmetic mean over all elements of its tensor,
//! batch included.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};
use crate::masking::OutBands;
use crate::tensor::{Scalar, Tensor};

/// `mean(ReLU(1 − t))`
pub fn hinge_real<T: Scalar>(g: &mut Graph<T>, t: Var) -> Var {
    let m = g.affine(t, -T::one(), T::one());
    let r = g.relu(m);
    g.mean(r)
}

/// `mean(ReLU(1 + t))`
pub fn hinge_fake<T: Scalar>(g: &mut Graph<T>, t: Var) -> Var {
    let m = g.affine(t, T::one(), T::one());
    let r = g.relu(m);
    g.mean(r)
}

/// Patch hinge loss on final logits.
pub fn disc_loss_global<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let r = hinge_real(g, real);
    let f = hinge_fake(g, fake);
    g.add(r, f)
}

/// Local (first-stage) and global (final) discriminator outputs for one video batch.
#[derive(Clone, Copy, Debug)]
pub struct DiscFeatures {
    pub local: Var,
    pub global: Var,
}

/// Restrict the last axis of `x` to the outpainted bands for `ratio`.
pub fn out_bands<T: Scalar>(g: &mut Graph<T>, x: Var, ratio: f64) -> Result<Var> {
    let w = *g
        .shape(x)
        .last()
        .ok_or_else(|| Error::Shape("scalar has no width".into()))?;
    let bands = OutBands::for_width(ratio, w)?;
    g.select_last(x, bands.columns())
}

pub fn center_cols<T: Scalar>(g: &mut Graph<T>, x: Var, ratio: f64) -> Result<Var> {
    let w = *g
        .shape(x)
        .last()
        .ok_or_else(|| Error::Shape("scalar has no width".into()))?;
    let bands = OutBands::for_width(ratio, w)?;
    g.select_last(x, bands.center_columns())
}

/// The four hinge terms of the outpainting loss and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct OutpaintingTerms {
    pub real_local: Var,
    pub real_global: Var,
    pub fake_local: Var,
    pub fake_global: Var,
    pub total: Var,
}

/// `α_l·h⁺(x_local) + α_g·h⁺(x_global) + α_l·h⁻(Out(z_local)) + α_g·h⁻(z_global)`,
/// with `h⁺ = hinge_real` and `h⁻ = hinge_fake`.
///
/// The real local term sees the whole feature map; the fake local term sees
/// only the band columns of the generated video's features.
pub fn outpainting_loss<T: Scalar>(
    g: &mut Graph<T>,
    real: &DiscFeatures,
    fake: &DiscFeatures,
    ratio: f64,
    alpha_local: f64,
    alpha_global: f64,
) -> Result<OutpaintingTerms> {
    let real_local = hinge_real(g, real.local);
    let real_global = hinge_real(g, real.global);
    let fake_band = out_bands(g, fake.local, ratio)?;
    let fake_local = hinge_fake(g, fake_band);
    let fake_global = hinge_fake(g, fake.global);
    let (al, ag) = (T::of(alpha_local), T::of(alpha_global));
    let total = g.weighted_sum(&[
        (real_local, al),
        (real_global, ag),
        (fake_local, al),
        (fake_global, ag),
    ])?;
    Ok(OutpaintingTerms {
        real_local,
        real_global,
        fake_local,
        fake_global,
        total,
    })
}

/// Generator adversarial loss `−mean(logits)`; `literal` drops the minus sign.
pub fn adv_gen_loss<T: Scalar>(g: &mut Graph<T>, fake_logits: Var, literal: bool) -> Var {
    let m = g.mean(fake_logits);
    if literal {
        m
    } else {
        g.affine(m, -T::one(), T::zero())
    }
}

/// Mean absolute error over band columns (hole) and center columns (valid).
pub fn rec_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    ratio: f64,
) -> Result<(Var, Var)> {
    let d = g.sub(pred, target)?;
    let a = g.abs(d);
    let hole = out_bands(g, a, ratio)?;
    let valid = center_cols(g, a, ratio)?;
    Ok((g.mean(hole), g.mean(valid)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    E2fgvi,
    Propainter,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_valid: f64,
    pub lambda_adv: f64,
    pub lambda_flow: f64,
    pub alpha_local: f64,
    pub alpha_global: f64,
}

impl LossWeights {
    pub fn e2fgvi() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_valid: 1.0,
            lambda_adv: 0.04,
            lambda_flow: 0.01,
            alpha_local: 0.5,
            alpha_global: 0.5,
        }
    }

    pub fn propainter() -> Self {
        Self {
            lambda_adv: 0.01,
            lambda_flow: 1.0,
            ..Self::e2fgvi()
        }
    }

    /// Apply a profile's adversarial and flow weights; `Custom` keeps `self`.
    pub fn with_profile(self, profile: Profile) -> Self {
        let p = match profile {
            Profile::E2fgvi => Self::e2fgvi(),
            Profile::Propainter => Self::propainter(),
            Profile::Custom => return self,
        };
        Self {
            lambda_adv: p.lambda_adv,
            lambda_flow: p.lambda_flow,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_rec,
            self.lambda_valid,
            self.lambda_adv,
            self.lambda_flow,
            self.alpha_local,
            self.alpha_global,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::e2fgvi()
    }
}

/// Generator loss components as graph nodes; `adv`/`flow` are absent when unused.
#[derive(Clone, Copy, Debug)]
pub struct GenComponents {
    pub rec_hole: Var,
    pub rec_valid: Var,
    pub adv: Option<Var>,
    pub flow: Option<Var>,
}

/// `λ_rec·hole + λ_valid·valid + λ_adv·adv + λ_flow·flow`
pub fn total_gen_loss<T: Scalar>(
    g: &mut Graph<T>,
    c: &GenComponents,
    w: &LossWeights,
) -> Result<Var> {
    let mut terms = vec![
        (c.rec_hole, T::of(w.lambda_rec)),
        (c.rec_valid, T::of(w.lambda_valid)),
    ];
    if let Some(a) = c.adv {
        terms.push((a, T::of(w.lambda_adv)));
    }
    if let Some(f) = c.flow {
        terms.push((f, T::of(w.lambda_flow)));
    }
    g.weighted_sum(&terms)
}

/// Scalar losses of one training iteration, one JSON line in the training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub mask_ratio: f64,
    pub d_loss: f64,
    pub out_loss_real_local: f64,
    pub out_loss_real_global: f64,
    pub out_loss_fake_local: f64,
    pub out_loss_fake_global: f64,
    pub adv: f64,
    pub rec_hole: f64,
    pub rec_valid: f64,
    pub flow: f64,
    pub total_g: f64,
}

impl LossReport {
    pub fn scalars(&self) -> [(&'static str, f64); 10] {
        [
            ("d_loss", self.d_loss),
            ("out_loss_real_local", self.out_loss_real_local),
            ("out_loss_real_global", self.out_loss_real_global),
            ("out_loss_fake_local", self.out_loss_fake_local),
            ("out_loss_fake_global", self.out_loss_fake_global),
            ("adv", self.adv),
            ("rec_hole", self.rec_hole),
            ("rec_valid", self.rec_valid),
            ("flow", self.flow),
            ("total_g", self.total_g),
        ]
    }

    /// First non-finite component, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.scalars()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(k, _)| k)
    }
}

/// Scalar value of a node.
pub fn scalar<T: Scalar>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).item().as_f64()
}

/// Evaluate a loss on constant tensors; handy for fixtures.
pub fn eval_on<T: Scalar>(
    inputs: &[Tensor<T>],
    f: impl FnOnce(&mut Graph<T>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(scalar(&g, out))
}
