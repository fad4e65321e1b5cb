//! PSNR, SSIM and a Fréchet feature distance over videos.

use std::cmp::Ordering;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::{DiscConfig, Discriminator};
use crate::error::{Error, Result};
use crate::masking::OutBands;
use crate::tensorio::{load_fixture, Space, VideoTensor};

pub const PSNR_CAP: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Seed of the random-weight feature extractor. Changing it changes every
/// reported feature distance.
pub const EXTRACTOR_SEED: u64 = 0x5eed_f1d0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Whole,
    #[serde(rename = "band")]
    OutBand,
}

impl FromStr for Region {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" => Ok(Self::Whole),
            "band" | "out_band" => Ok(Self::OutBand),
            _ => Err(Error::Config(format!("unknown region `{s}` (whole|band)"))),
        }
    }
}

fn same_dims(a: &VideoTensor, b: &VideoTensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "metric inputs differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if a.space() != Space::Pixel || b.space() != Space::Pixel {
        return Err(Error::Range("metrics need pixel-space videos".into()));
    }
    Ok(())
}

/// Mean squared error over the columns accepted by `keep`.
fn mse_where(a: &VideoTensor, b: &VideoTensor, keep: impl Fn(usize) -> bool) -> Result<f64> {
    same_dims(a, b)?;
    let w = a.width();
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (i, (x, y)) in a.tensor().data().iter().zip(b.tensor().data()).enumerate() {
        if keep(i % w) {
            let d = (*x - *y) as f64;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Range("metric region selects no pixels".into()));
    }
    Ok(sum / n as f64)
}

pub fn mse(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    mse_where(a, b, |_| true)
}

/// MSE restricted to the two outer bands of ratio `ratio`.
pub fn mse_band(a: &VideoTensor, b: &VideoTensor, ratio: f64) -> Result<f64> {
    let bands = OutBands::for_width(ratio, a.width())?;
    mse_where(a, b, |c| bands.contains(c))
}

/// MSE over the kept center columns.
pub fn mse_center(a: &VideoTensor, b: &VideoTensor, ratio: f64) -> Result<f64> {
    let bands = OutBands::for_width(ratio, a.width())?;
    mse_where(a, b, |c| !bands.contains(c))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(pred: &VideoTensor, target: &VideoTensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target)?))
}

pub fn psnr_band(pred: &VideoTensor, target: &VideoTensor, ratio: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse_band(pred, target, ratio)?))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode Gaussian filter of an `h×w` plane.
fn blur(x: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..SSIM_WINDOW).map(|j| k[j] * x[y * w + x0 + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..SSIM_WINDOW).map(|j| k[j] * rows[(y0 + j) * ow + x0]).sum();
        }
    }
    out
}

fn luma(v: &VideoTensor, b: usize, t: usize) -> Vec<f64> {
    let [_, nt, nc, h, w] = v.dims();
    let plane = h * w;
    let d = v.tensor().data();
    let base = (b * nt + t) * nc * plane;
    (0..plane)
        .map(|p| {
            if nc == 1 {
                d[base + p] as f64
            } else {
                (0..3).map(|c| LUMA[c] * d[base + c * plane + p] as f64).sum()
            }
        })
        .collect()
}

/// Per-frame SSIM maps of size `(H-10) × (W-10)`; map column `j` is centered on pixel column `j+5`.
fn ssim_maps(a: &VideoTensor, b: &VideoTensor) -> Result<Vec<Vec<f64>>> {
    same_dims(a, b)?;
    let [nb, nt, nc, h, w] = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "frame {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    if nc != 1 && nc != 3 {
        return Err(Error::Shape(format!("SSIM needs 1 or 3 channels, got {nc}")));
    }
    let k = gaussian_window();
    let mut maps = Vec::with_capacity(nb * nt);
    for bi in 0..nb {
        for t in 0..nt {
            let x = luma(a, bi, t);
            let y = luma(b, bi, t);
            let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
            let mx = blur(&x, h, w, &k);
            let my = blur(&y, h, w, &k);
            let sxx = blur(&prod(&x, &x), h, w, &k);
            let syy = blur(&prod(&y, &y), h, w, &k);
            let sxy = blur(&prod(&x, &y), h, w, &k);
            let map = (0..mx.len())
                .map(|i| {
                    let (ux, uy) = (mx[i], my[i]);
                    let vx = sxx[i] - ux * ux;
                    let vy = syy[i] - uy * uy;
                    let cov = sxy[i] - ux * uy;
                    ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                        / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
                })
                .collect();
            maps.push(map);
        }
    }
    Ok(maps)
}

/// Mean Gaussian-window SSIM over frames, on luminance.
pub fn ssim(pred: &VideoTensor, target: &VideoTensor) -> Result<f64> {
    let maps = ssim_maps(pred, target)?;
    let n = maps.len() as f64;
    Ok(maps.iter().map(|m| m.iter().sum::<f64>() / m.len() as f64).sum::<f64>() / n)
}

/// SSIM averaged over window positions centered inside the outer bands.
pub fn ssim_band(pred: &VideoTensor, target: &VideoTensor, ratio: f64) -> Result<f64> {
    let bands = OutBands::for_width(ratio, pred.width())?;
    let maps = ssim_maps(pred, target)?;
    let ow = pred.width() + 1 - SSIM_WINDOW;
    let half = SSIM_WINDOW / 2;
    let (mut sum, mut n) = (0.0, 0usize);
    for m in &maps {
        for (i, v) in m.iter().enumerate() {
            if bands.contains(i % ow + half) {
                sum += v;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Range(format!(
            "no SSIM window is centered in the bands at ratio {ratio}"
        )));
    }
    Ok(sum / n as f64)
}

/// Mean and covariance of a feature distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub cov: Vec<f64>,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean and unbiased covariance; rows are sorted first so the result does
    /// not depend on the order of `features`.
    pub fn from_features(mut features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::Range(format!(
                "feature statistics need at least 2 samples, got {}",
                features.len()
            )));
        }
        let d = features[0].len();
        if d == 0 || features.iter().any(|f| f.len() != d) {
            return Err(Error::Shape("feature vectors must share a positive length".into()));
        }
        features.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in &features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = vec![0.0; d * d];
        for f in &features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in 0..d {
                    cov[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= n - 1.0);
        Ok(Self { mean, cov })
    }
}

/// `||μ1−μ2||² + Tr(Σ1 + Σ2 − 2 (Σ1^½ Σ2 Σ1^½)^½)`.
///
/// The trace of `(Σ1 Σ2)^½` is taken through the symmetric product
/// `Σ1^½ Σ2 Σ1^½`, which has the same eigenvalues; negative eigenvalues from
/// rounding are clamped to zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d || a.cov.len() != d * d || b.cov.len() != d * d {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let s1 = DMatrix::from_row_slice(d, d, &a.cov);
    let s2 = DMatrix::from_row_slice(d, d, &b.cov);
    let root1 = psd_sqrt(&s1);
    let inner = &root1 * &s2 * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let dmu: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(dmu + s1.trace() + s2.trace() - 2.0 * tr_sqrt)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    vals.iter_mut().for_each(|l| *l = l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Maps a clip to one feature vector.
pub trait FeatureExtractor {
    fn dim(&self) -> usize;
    fn extract(&self, clip: &VideoTensor) -> Result<Vec<f64>>;
}

/// Fixed-seed random-weight FEM-shaped network with global average pooling.
pub struct RandomFemExtractor {
    net: Discriminator<f32>,
}

impl RandomFemExtractor {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(EXTRACTOR_SEED);
        let net = Discriminator::new(DiscConfig::default().without_fcm(), "extractor", &mut rng)
            .expect("default FEM config is valid");
        Self { net }
    }
}

impl Default for RandomFemExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureExtractor for RandomFemExtractor {
    fn dim(&self) -> usize {
        self.net.config().fem_layers.last().map_or(0, |l| l.out_ch)
    }

    fn extract(&self, clip: &VideoTensor) -> Result<Vec<f64>> {
        let (local, _) = self.net.infer(clip.tensor())?;
        let s = local.shape();
        let (b, t, c, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let plane = h * w;
        let d = local.data();
        let mut f = vec![0.0f64; c];
        for bi in 0..b {
            for ti in 0..t {
                for (ci, acc) in f.iter_mut().enumerate() {
                    let base = ((bi * t + ti) * c + ci) * plane;
                    *acc += d[base..base + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
            }
        }
        let n = (b * t * plane) as f64;
        f.iter_mut().for_each(|v| *v /= n);
        Ok(f)
    }
}

pub fn video_feature_stats(
    extractor: &dyn FeatureExtractor,
    clips: &[VideoTensor],
) -> Result<FeatureStats> {
    if clips.len() < 2 {
        return Err(Error::Range(format!(
            "feature statistics need at least 2 clips, got {}",
            clips.len()
        )));
    }
    let feats = clips
        .iter()
        .map(|c| extractor.extract(c))
        .collect::<Result<Vec<_>>>()?;
    FeatureStats::from_features(feats)
}

/// Load externally computed features stored as an `(N, D)` tensor file.
pub fn load_feature_dump(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let t = load_fixture(path)?;
    if t.ndim() != 2 {
        return Err(Error::Fixture {
            path: path.to_path_buf(),
            reason: format!("feature dump must be (N, D), got {:?}", t.shape()),
        });
    }
    let d = t.shape()[1];
    Ok(t.data()
        .chunks(d)
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Psnr,
    Ssim,
    Fvd,
}

/// Parse a comma-separated metric list such as `psnr,ssim,fvd`.
pub fn parse_metrics(s: &str) -> Result<Vec<Metric>> {
    let mut out = Vec::new();
    for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let m = match name {
            "psnr" => Metric::Psnr,
            "ssim" => Metric::Ssim,
            "fvd" => Metric::Fvd,
            _ => return Err(Error::Config(format!("unknown metric `{name}`"))),
        };
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no metrics requested".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: serde_json::Value,
    pub mask_ratio: f64,
    pub region: Region,
    pub per_clip: Vec<ClipMetrics>,
    pub aggregate: Aggregate,
    pub fvd: Option<f64>,
}

/// One evaluated clip: prediction and ground truth of equal shape.
pub struct EvalPair {
    pub clip_id: String,
    pub pred: VideoTensor,
    pub target: VideoTensor,
}

pub fn evaluate(
    pairs: &[EvalPair],
    ratio: f64,
    region: Region,
    metrics: &[Metric],
    extractor: &dyn FeatureExtractor,
    config: serde_json::Value,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Range("nothing to evaluate".into()));
    }
    let mut order: Vec<&EvalPair> = pairs.iter().collect();
    order.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let want = |m| metrics.contains(&m);
    let mut per_clip = Vec::with_capacity(order.len());
    for p in &order {
        let psnr = if want(Metric::Psnr) {
            Some(match region {
                Region::Whole => psnr(&p.pred, &p.target)?,
                Region::OutBand => psnr_band(&p.pred, &p.target, ratio)?,
            })
        } else {
            None
        };
        let ssim = if want(Metric::Ssim) {
            Some(match region {
                Region::Whole => ssim(&p.pred, &p.target)?,
                Region::OutBand => ssim_band(&p.pred, &p.target, ratio)?,
            })
        } else {
            None
        };
        per_clip.push(ClipMetrics {
            clip_id: p.clip_id.clone(),
            psnr,
            ssim,
        });
    }
    let mean = |f: fn(&ClipMetrics) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = per_clip.iter().map(f).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let aggregate = Aggregate {
        psnr: mean(|c| c.psnr),
        ssim: mean(|c| c.ssim),
    };
    let fvd = if want(Metric::Fvd) {
        let preds: Vec<VideoTensor> = order.iter().map(|p| p.pred.clone()).collect();
        let targets: Vec<VideoTensor> = order.iter().map(|p| p.target.clone()).collect();
        let a = video_feature_stats(extractor, &preds)?;
        let b = video_feature_stats(extractor, &targets)?;
        Some(frechet_distance(&a, &b)?)
    } else {
        None
    };
    Ok(MetricsReport {
        config,
        mask_ratio: ratio,
        region,
        per_clip,
        aggregate,
        fvd,
    })
}
