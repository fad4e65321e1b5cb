use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    bilinear, power_iterate, Bound, Conv3dSpec, Graph, ParamSet, SpectralState, Var, SIGMA_EPS,
};
use crate::error::{Error, Result};
use crate::losses::DiscFeatures;
use crate::tensor::{Scalar, Tensor};

/// Layer stacks of the two-stage discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscConfig {
    /// Feature extraction module: early layers with small receptive field.
    pub fem_layers: Vec<Conv3dSpec>,
    /// Feature comparison module: deeper layers ending in one logit channel.
    /// Empty for a FEM-only discriminator.
    pub fcm_layers: Vec<Conv3dSpec>,
    pub slope: f64,
    pub spectral_norm: bool,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self::with_kernel(3, [32, 64, 128], 128)
    }
}

impl DiscConfig {
    /// Three stride-2 FEM layers and three stride-2 FCM layers of kernel `(3,k,k)`.
    pub fn with_kernel(in_ch: usize, fem_ch: [usize; 3], fcm_ch: usize) -> Self {
        let layer = |i, o| Conv3dSpec::new(i, o, [3, 7, 7], [1, 2, 2]);
        Self {
            fem_layers: vec![
                layer(in_ch, fem_ch[0]),
                layer(fem_ch[0], fem_ch[1]),
                layer(fem_ch[1], fem_ch[2]),
            ],
            fcm_layers: vec![
                layer(fem_ch[2], fcm_ch),
                layer(fcm_ch, fcm_ch),
                layer(fcm_ch, 1),
            ],
            slope: 0.2,
            spectral_norm: true,
        }
    }

    /// Same channel plan with narrower layers; used by small tests and fast runs.
    pub fn small(width: usize) -> Self {
        Self::with_kernel(3, [width, width, width], width)
    }

    pub fn without_fcm(mut self) -> Self {
        self.fcm_layers.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fem_layers.is_empty() {
            return Err(Error::Config("discriminator needs FEM layers".into()));
        }
        for s in self.fem_layers.iter().chain(&self.fcm_layers) {
            s.validate()?;
        }
        let chain: Vec<&Conv3dSpec> = self.fem_layers.iter().chain(&self.fcm_layers).collect();
        for pair in chain.windows(2) {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::Config(format!(
                    "layer channels do not chain: {} -> {}",
                    pair[0].out_ch, pair[1].in_ch
                )));
            }
        }
        if let Some(last) = self.fcm_layers.last() {
            if last.out_ch != 1 {
                return Err(Error::Config(format!(
                    "final FCM layer must output 1 channel, has {}",
                    last.out_ch
                )));
            }
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.fem_layers[0].in_ch
    }

    pub fn all_layers(&self) -> Vec<Conv3dSpec> {
        self.fem_layers.iter().chain(&self.fcm_layers).copied().collect()
    }
}

#[derive(Clone, Debug)]
struct Layer {
    spec: Conv3dSpec,
    weight: usize,
    bias: usize,
}

/// FEM + FCM discriminator with its parameters and spectral-norm state.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar> {
    config: DiscConfig,
    params: ParamSet<T>,
    fem: Vec<Layer>,
    fcm: Vec<Layer>,
    spectral: Vec<SpectralState<T>>,
}

/// A discriminator placed on a graph: effective (possibly normalized) weights and biases.
#[derive(Clone, Debug)]
pub struct DiscBinding {
    pub bound: Bound,
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: DiscConfig, prefix: &str, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let gain = (2.0 / (1.0 + config.slope * config.slope)).sqrt();
        let mut make = |stage: &str, specs: &[Conv3dSpec], params: &mut ParamSet<T>| {
            specs
                .iter()
                .enumerate()
                .map(|(i, spec)| {
                    let (weight, bias) =
                        params.add_conv(&format!("{prefix}.{stage}.{i}"), spec, gain, rng);
                    Layer {
                        spec: *spec,
                        weight,
                        bias,
                    }
                })
                .collect::<Vec<_>>()
        };
        let fem = make("fem", &config.fem_layers, &mut params);
        let fcm = make("fcm", &config.fcm_layers, &mut params);
        let spectral = fem
            .iter()
            .chain(&fcm)
            .map(|l| SpectralState::new(l.spec.out_ch, rng))
            .collect();
        let mut d = Self {
            config,
            params,
            fem,
            fcm,
            spectral,
        };
        d.refresh_spectral();
        Ok(d)
    }

    pub fn config(&self) -> &DiscConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn has_fcm(&self) -> bool {
        !self.fcm.is_empty()
    }

    pub fn spectral_states(&self) -> &[SpectralState<T>] {
        &self.spectral
    }

    pub fn spectral_states_mut(&mut self) -> &mut [SpectralState<T>] {
        &mut self.spectral
    }

    /// One power-iteration step per layer; call once per discriminator update.
    pub fn refresh_spectral(&mut self) {
        if !self.config.spectral_norm {
            return;
        }
        for (layer, st) in self.fem.iter().chain(&self.fcm).zip(&mut self.spectral) {
            power_iterate(&self.params.get(layer.weight).value, st);
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<DiscBinding> {
        let bound = self.params.bind(g, trainable);
        self.bind_vars(g, bound)
    }

    /// Bind with caller-made parameter variables; spectral scaling still uses
    /// the stored parameter values to decide whether a layer is normalizable.
    pub fn bind_vars(&self, g: &mut Graph<T>, bound: Bound) -> Result<DiscBinding> {
        if bound.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameter variables for {} parameters",
                bound.len(),
                self.params.len()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (layer, st) in self.fem.iter().chain(&self.fcm).zip(&self.spectral) {
            let w = bound.var(layer.weight);
            let value = &self.params.get(layer.weight).value;
            let usable = self.config.spectral_norm
                && st.v.len() * st.u.len() == value.len()
                && bilinear(value.data(), &st.u, &st.v).as_f64() >= SIGMA_EPS;
            let w = if usable {
                g.spectral_scale(w, st.u.clone(), st.v.clone())?
            } else {
                w
            };
            weights.push(w);
            biases.push(bound.var(layer.bias));
        }
        Ok(DiscBinding {
            bound,
            weights,
            biases,
        })
    }

    fn run(
        &self,
        g: &mut Graph<T>,
        b: &DiscBinding,
        x: Var,
        layers: &[Layer],
        offset: usize,
        lead_activation: bool,
    ) -> Result<Var> {
        let slope = T::of(self.config.slope);
        let mut h = x;
        for (i, layer) in layers.iter().enumerate() {
            if i > 0 || lead_activation {
                h = g.leaky_relu(h, slope);
            }
            h = g.conv3d(h, b.weights[offset + i], Some(b.biases[offset + i]), layer.spec)?;
        }
        Ok(h)
    }

    /// Local features: raw output of the last FEM layer.
    pub fn fem_forward(&self, g: &mut Graph<T>, b: &DiscBinding, x: Var) -> Result<Var> {
        let c = g.shape(x).get(2).copied().unwrap_or(0);
        if c != self.config.in_channels() {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {c}",
                self.config.in_channels()
            )));
        }
        self.run(g, b, x, &self.fem, 0, false)
    }

    /// Global logits from local features (activation applied first).
    pub fn fcm_forward(&self, g: &mut Graph<T>, b: &DiscBinding, local: Var) -> Result<Var> {
        if self.fcm.is_empty() {
            return Err(Error::Config("discriminator has no FCM layers".into()));
        }
        self.run(g, b, local, &self.fcm, self.fem.len(), true)
    }

    pub fn features(&self, g: &mut Graph<T>, b: &DiscBinding, x: Var) -> Result<DiscFeatures> {
        let local = self.fem_forward(g, b, x)?;
        let global = self.fcm_forward(g, b, local)?;
        Ok(DiscFeatures { local, global })
    }

    /// Inference on plain tensors: `(local, global)`; global is `None` without an FCM.
    pub fn infer(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false)?;
        let xv = g.constant(x.clone());
        let local = self.fem_forward(&mut g, &b, xv)?;
        let global = if self.has_fcm() {
            let gl = self.fcm_forward(&mut g, &b, local)?;
            Some(g.value(gl).clone())
        } else {
            None
        };
        Ok((g.value(local).clone(), global))
    }

    /// Same network at another precision.
    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            config: self.config.clone(),
            params: self.params.cast(),
            fem: self.fem.clone(),
            fcm: self.fcm.clone(),
            spectral: self
                .spectral
                .iter()
                .map(|s| SpectralState {
                    u: s.u.iter().map(|&x| U::of(x.as_f64())).collect(),
                    v: s.v.iter().map(|&x| U::of(x.as_f64())).collect(),
                })
                .collect(),
        }
    }
}
