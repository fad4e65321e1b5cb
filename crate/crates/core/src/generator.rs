//! Generator contract, the toy encoder–decoder video generator, temporal
//! frame sampling and sliding-window inference.

use std::ops::Range;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Bound, Conv3dSpec, Graph, ParamSet, Var};
use crate::error::{Error, Result};
use crate::masking::{apply_mask, make_mask, MaskSpec, OutBands};
use crate::tensor::{Scalar, Tensor};
use crate::tensorio::{Space, VideoTensor};

pub const LOCAL_FRAMES: usize = 5;
pub const NON_LOCAL_FRAMES: usize = 3;
pub const DEFAULT_WINDOW: usize = 10;

/// A video generator mapping masked frames (RGB + mask channel) to full frames.
pub trait VideoGenerator<T: Scalar>: Send + Sync {
    fn kind(&self) -> &str;

    /// Input channels including the trailing mask channel.
    fn in_channels(&self) -> usize;

    fn params(&self) -> &ParamSet<T>;

    fn params_mut(&mut self) -> &mut ParamSet<T>;

    /// `x` is `(B, T, C+1, H, W)`; returns `(B, T, C, H, W)` in `[0,1]`.
    /// `frame_ids` are the source-clip indices of the `T` frames.
    fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var, frame_ids: &[usize]) -> Result<Var>;

    /// Optional auxiliary flow loss; generators without a flow branch return `None`.
    fn flow_loss(&self, _g: &mut Graph<T>, _p: &Bound, _x: Var, _pred: Var) -> Result<Option<Var>> {
        Ok(None)
    }

    /// Forward on a plain tensor, without gradients.
    fn infer(&self, x: &Tensor<T>, frame_ids: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params().bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv, frame_ids)?;
        Ok(g.value(y).clone())
    }
}

/// Generator selection and shape, as it appears in a training config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Registered factory name; only `toy` ships with this crate.
    pub kind: String,
    pub channels: [usize; 3],
    pub res_blocks: usize,
    pub kernel: [usize; 3],
    pub slope: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: "toy".into(),
            channels: [32, 64, 128],
            res_blocks: 3,
            kernel: [3, 3, 3],
            slope: 0.2,
        }
    }
}

/// Names reserved for out-of-tree adapters of full-scale inpainting models.
pub const RESERVED_KINDS: [&str; 2] = ["e2fgvi", "propainter"];

pub fn build_generator<T: Scalar, R: Rng + ?Sized>(
    cfg: &GeneratorConfig,
    rng: &mut R,
) -> Result<Box<dyn VideoGenerator<T>>> {
    match cfg.kind.as_str() {
        "toy" => Ok(Box::new(ToyGenerator::new(cfg.clone(), rng)?)),
        k if RESERVED_KINDS.contains(&k) => Err(Error::Config(format!(
            "generator kind `{k}` is reserved for an external adapter that is not linked into this build"
        ))),
        k => Err(Error::Config(format!("unknown generator kind `{k}`"))),
    }
}

#[derive(Clone, Debug)]
struct Conv {
    spec: Conv3dSpec,
    weight: usize,
    bias: usize,
}

/// Three stride-2 encoder convs, residual blocks, three upsample+conv decoder
/// blocks with additive skips (encoder levels plus a full-resolution stem),
/// and a sigmoid output.
#[derive(Clone, Debug)]
pub struct ToyGenerator<T: Scalar> {
    cfg: GeneratorConfig,
    params: ParamSet<T>,
    /// Full-resolution features of the input, added before the last decoder conv.
    stem: Conv,
    encoder: Vec<Conv>,
    residual: Vec<(Conv, Conv)>,
    decoder: Vec<Conv>,
}

impl<T: Scalar> ToyGenerator<T> {
    pub const IMAGE_CHANNELS: usize = 3;

    pub fn new<R: Rng + ?Sized>(cfg: GeneratorConfig, rng: &mut R) -> Result<Self> {
        let [c0, c1, c2] = cfg.channels;
        if cfg.channels.contains(&0) || cfg.kernel.contains(&0) {
            return Err(Error::Config(format!("bad generator config {cfg:?}")));
        }
        let k = cfg.kernel;
        let gain = (2.0 / (1.0 + cfg.slope * cfg.slope)).sqrt();
        let mut params = ParamSet::new();
        let mut conv = |name: String, i, o, stride, gain: f64| {
            let spec = Conv3dSpec::new(i, o, k, stride);
            let (weight, bias) = params.add_conv(&name, &spec, gain, rng);
            Conv { spec, weight, bias }
        };
        let s2 = [1, 2, 2];
        let s1 = [1, 1, 1];
        let cin = Self::IMAGE_CHANNELS + 1;
        let stem = conv("gen.stem".into(), cin, c0, s1, gain);
        let encoder = vec![
            conv("gen.enc.0".into(), cin, c0, s2, gain),
            conv("gen.enc.1".into(), c0, c1, s2, gain),
            conv("gen.enc.2".into(), c1, c2, s2, gain),
        ];
        let residual = (0..cfg.res_blocks)
            .map(|i| {
                (
                    conv(format!("gen.res.{i}.a"), c2, c2, s1, gain),
                    // Damped second conv keeps the residual path near identity at init.
                    conv(format!("gen.res.{i}.b"), c2, c2, s1, 0.1),
                )
            })
            .collect();
        let decoder = vec![
            conv("gen.dec.0".into(), c2, c1, s1, gain),
            conv("gen.dec.1".into(), c1, c0, s1, gain),
            conv("gen.dec.2".into(), c0, Self::IMAGE_CHANNELS, s1, 1.0),
        ];
        Ok(Self {
            cfg,
            params,
            stem,
            encoder,
            residual,
            decoder,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Spatial size multiple the encoder/decoder round trip preserves.
    pub const SIZE_MULTIPLE: usize = 8;

    fn apply(&self, g: &mut Graph<T>, p: &Bound, c: &Conv, x: Var) -> Result<Var> {
        g.conv3d(x, p.var(c.weight), Some(p.var(c.bias)), c.spec)
    }
}

impl<T: Scalar> VideoGenerator<T> for ToyGenerator<T> {
    fn kind(&self) -> &str {
        "toy"
    }

    fn in_channels(&self) -> usize {
        Self::IMAGE_CHANNELS + 1
    }

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var, _frame_ids: &[usize]) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 5 || s[2] != self.in_channels() {
            return Err(Error::Shape(format!(
                "generator expects (B,T,{},H,W), got {s:?}",
                self.in_channels()
            )));
        }
        let m = Self::SIZE_MULTIPLE;
        if s[3] % m != 0 || s[4] % m != 0 {
            return Err(Error::Shape(format!(
                "generator needs H and W divisible by {m}, got {}x{}",
                s[3], s[4]
            )));
        }
        let slope = T::of(self.cfg.slope);
        let stem = self.apply(g, p, &self.stem, x)?;
        let stem = g.leaky_relu(stem, slope);
        let mut h = x;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for c in &self.encoder {
            h = self.apply(g, p, c, h)?;
            h = g.leaky_relu(h, slope);
            skips.push(h);
        }
        for (a, b) in &self.residual {
            let r = self.apply(g, p, a, h)?;
            let r = g.leaky_relu(r, slope);
            let r = self.apply(g, p, b, r)?;
            h = g.add(h, r)?;
        }
        let last = self.decoder.len() - 1;
        for (i, c) in self.decoder.iter().enumerate() {
            h = g.upsample(h, 2, 2)?;
            if i == last {
                h = g.add(h, stem)?;
            }
            h = self.apply(g, p, c, h)?;
            h = if i < last {
                // U-Net style additive skip from the encoder level at this resolution.
                let skip = skips[skips.len() - 2 - i];
                let h = g.add(h, skip)?;
                g.leaky_relu(h, slope)
            } else {
                g.sigmoid(h)
            };
        }
        Ok(h)
    }
}

/// Frame indices for one training sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipSample {
    /// Contiguous target frames.
    pub local: Vec<usize>,
    /// Context frames from outside the local block.
    pub non_local: Vec<usize>,
}

impl ClipSample {
    /// Local frames first, then non-local.
    pub fn order(&self) -> Vec<usize> {
        self.local.iter().chain(&self.non_local).copied().collect()
    }
}

/// Five contiguous local frames and three distinct non-local frames.
pub fn sample_clip<R: Rng + ?Sized>(total: usize, rng: &mut R) -> Result<ClipSample> {
    if total < LOCAL_FRAMES + NON_LOCAL_FRAMES {
        return Err(Error::Range(format!(
            "clip of {total} frames is shorter than {}",
            LOCAL_FRAMES + NON_LOCAL_FRAMES
        )));
    }
    let start = rng.gen_range(0..=total - LOCAL_FRAMES);
    let local: Vec<usize> = (start..start + LOCAL_FRAMES).collect();
    let rest: Vec<usize> = (0..total).filter(|i| !local.contains(i)).collect();
    let mut non_local: Vec<usize> = sample(rng, rest.len(), NON_LOCAL_FRAMES)
        .into_iter()
        .map(|i| rest[i])
        .collect();
    non_local.sort_unstable();
    Ok(ClipSample { local, non_local })
}

/// Consecutive non-overlapping windows covering `[0, total)`.
pub fn window_ranges(total: usize, window: usize) -> Result<Vec<Range<usize>>> {
    if window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    if total == 0 {
        return Err(Error::Range("empty video".into()));
    }
    Ok((0..total)
        .step_by(window)
        .map(|s| s..(s + window).min(total))
        .collect())
}

/// Mask the bands of `video`, run the generator once, return full frames.
///
/// With `composite`, the known center columns are copied back from `video`.
pub fn outpaint(
    gen: &dyn VideoGenerator<f32>,
    video: &VideoTensor,
    ratio: f64,
    frame_ids: &[usize],
    composite: bool,
) -> Result<VideoTensor> {
    let [_, t, _, h, w] = video.dims();
    let mask = make_mask(MaskSpec::new(ratio, w)?, (t, h, w))?;
    let x = apply_mask(video, &mask)?;
    let mut y = gen.infer(x.tensor(), frame_ids)?;
    y.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    if composite {
        let bands = OutBands::for_width(ratio, w)?;
        let src = video.tensor().data();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            if !bands.contains(i % w) {
                *v = src[i];
            }
        }
    }
    VideoTensor::new(y, Space::Pixel)
}

/// Outpaint a whole video window by window.
pub fn sliding_window_infer(
    gen: &dyn VideoGenerator<f32>,
    video: &VideoTensor,
    window: usize,
    ratio: f64,
    composite: bool,
) -> Result<VideoTensor> {
    let ranges = window_ranges(video.frames(), window)?;
    let mut parts = Vec::with_capacity(ranges.len());
    for r in ranges {
        let chunk = video.frame_range(r.start, r.len())?;
        let ids: Vec<usize> = r.clone().collect();
        parts.push(outpaint(gen, &chunk, ratio, &ids, composite)?);
    }
    let refs: Vec<&VideoTensor> = parts.iter().collect();
    VideoTensor::concat_frames(&refs)
}

/// Reusable adapter checks: output shape, range, determinism and gradient flow.
pub fn check_contract(gen: &dyn VideoGenerator<f32>, input: &VideoTensor) -> Result<()> {
    let [b, t, c, h, w] = input.dims();
    if c != gen.in_channels() {
        return Err(Error::Shape(format!(
            "contract input has {c} channels, generator takes {}",
            gen.in_channels()
        )));
    }
    let ids: Vec<usize> = (0..t).collect();
    let y1 = gen.infer(input.tensor(), &ids)?;
    if y1.shape() != [b, t, c - 1, h, w] {
        return Err(Error::Shape(format!(
            "contract: output {:?}, expected {:?}",
            y1.shape(),
            [b, t, c - 1, h, w]
        )));
    }
    if let Some(v) = y1.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Range(format!("contract: output value {v} outside [0,1]")));
    }
    let y2 = gen.infer(input.tensor(), &ids)?;
    if y1.data().iter().zip(y2.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(Error::Range("contract: forward pass is not deterministic".into()));
    }
    let mut g = Graph::new();
    let p = gen.params().bind(&mut g, true);
    let x = g.constant(input.tensor().clone());
    let y = gen.forward(&mut g, &p, x, &ids)?;
    let loss = g.mean(y);
    let grads = g.backward(loss)?;
    let mut any = false;
    for (i, param) in gen.params().iter().enumerate() {
        if let Some(d) = grads.get(p.var(i)) {
            if !d.is_finite() {
                return Err(Error::NonFiniteGradient(param.name.clone()));
            }
            any |= d.data().iter().any(|&v| v != 0.0);
        }
    }
    if !any {
        return Err(Error::Range("contract: no parameter receives a gradient".into()));
    }
    Ok(())
}
