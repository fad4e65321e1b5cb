//! Horizontal outpainting geometry.
//!
//! A mask ratio `m` on a width `W` gives two bands of `floor(m·W/2)` columns:
//! `[0, band)` on the left and `[W−band, W)` on the right. Mask value 1 marks
//! columns to generate.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::tensorio::{Space, VideoTensor};

pub const DEFAULT_RATIO_RANGE: (f64, f64) = (1.0 / 12.0, 1.0 / 3.0);

// Absorbs float error in m·W/2 when the exact value is an integer (m=1/3, W=6).
const BAND_EPS: f64 = 1e-9;

/// `floor(m·W/2)`, rejecting empty or overlapping bands.
pub fn band_width(ratio: f64, width: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Range(format!("mask ratio {ratio} outside (0,1)")));
    }
    let band = (ratio * width as f64 / 2.0 + BAND_EPS).floor() as usize;
    if band == 0 {
        return Err(Error::EmptyBand { ratio, width });
    }
    debug_assert!(2 * band <= width);
    Ok(band)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSpec {
    pub ratio: f64,
    pub width: usize,
}

impl MaskSpec {
    pub fn new(ratio: f64, width: usize) -> Result<Self> {
        band_width(ratio, width)?;
        Ok(Self { ratio, width })
    }

    pub fn bands(&self) -> OutBands {
        OutBands {
            band: band_width(self.ratio, self.width).expect("validated at construction"),
            width: self.width,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutBands {
    pub band: usize,
    pub width: usize,
}

impl OutBands {
    pub fn for_width(ratio: f64, width: usize) -> Result<Self> {
        Ok(MaskSpec::new(ratio, width)?.bands())
    }

    pub fn left(&self) -> Range<usize> {
        0..self.band
    }

    pub fn right(&self) -> Range<usize> {
        self.width - self.band..self.width
    }

    pub fn center(&self) -> Range<usize> {
        self.band..self.width - self.band
    }

    pub fn contains(&self, col: usize) -> bool {
        col < self.band || col >= self.width - self.band
    }

    /// Left band then right band, the column order `out_extract` produces.
    pub fn columns(&self) -> Vec<usize> {
        self.left().chain(self.right()).collect()
    }

    pub fn center_columns(&self) -> Vec<usize> {
        self.center().collect()
    }

    /// Columns at or beyond `dist` from both bands.
    pub fn far_columns(&self, dist: usize) -> Range<usize> {
        let lo = (self.band - 1) + dist;
        let hi = (self.width - self.band).saturating_sub(dist) + 1;
        lo..hi.max(lo)
    }
}

/// Binary `(1, T, 1, H, W)` mask: 1 on band columns, 0 elsewhere.
pub fn make_mask(spec: MaskSpec, (t, h, w): (usize, usize, usize)) -> Result<VideoTensor> {
    if spec.width != w {
        return Err(Error::Shape(format!(
            "mask spec width {} vs frame width {w}",
            spec.width
        )));
    }
    let bands = spec.bands();
    let data = Tensor::from_fn(&[1, t, 1, h, w], |i| {
        if bands.contains(i[4]) {
            1.0
        } else {
            0.0
        }
    });
    VideoTensor::new(data, Space::Pixel)
}

/// Left and right bands of the last axis, concatenated.
pub fn out_extract<T: Scalar>(x: &Tensor<T>, ratio: f64) -> Result<Tensor<T>> {
    let w = *x.shape().last().ok_or_else(|| Error::Shape("scalar".into()))?;
    Ok(x.select_last(&OutBands::for_width(ratio, w)?.columns()))
}

/// Complement of [`out_extract`]: the kept center columns.
pub fn center_extract<T: Scalar>(x: &Tensor<T>, ratio: f64) -> Result<Tensor<T>> {
    let w = *x.shape().last().ok_or_else(|| Error::Shape("scalar".into()))?;
    Ok(x.select_last(&OutBands::for_width(ratio, w)?.center_columns()))
}

/// Zero the band columns and append the mask as an extra channel.
///
/// `mask` is `(1, T, 1, H, W)` (broadcast over batch) or `(B, T, 1, H, W)`.
pub fn apply_mask(video: &VideoTensor, mask: &VideoTensor) -> Result<VideoTensor> {
    let [b, t, c, h, w] = video.dims();
    let [mb, mt, mc, mh, mw] = mask.dims();
    if (mt, mc, mh, mw) != (t, 1, h, w) || (mb != 1 && mb != b) {
        return Err(Error::Shape(format!(
            "mask {:?} does not fit video {:?}",
            mask.dims(),
            video.dims()
        )));
    }
    let plane = h * w;
    let src = video.tensor().data();
    let m = mask.tensor().data();
    let mut out = Vec::with_capacity(b * t * (c + 1) * plane);
    for bi in 0..b {
        for ti in 0..t {
            let mplane = &m[((if mb == 1 { 0 } else { bi }) * t + ti) * plane..][..plane];
            for ci in 0..c {
                let s = &src[((bi * t + ti) * c + ci) * plane..][..plane];
                out.extend(s.iter().zip(mplane).map(|(&v, &k)| v * (1.0 - k)));
            }
            out.extend_from_slice(mplane);
        }
    }
    VideoTensor::new(Tensor::from_vec(&[b, t, c + 1, h, w], out)?, video.space())
}

/// Uniform draw from `[lo, hi]`.
pub fn sample_ratio<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::Range(format!("invalid ratio range [{lo}, {hi}]")));
    }
    if lo == hi {
        return Ok(lo);
    }
    Ok(rng.gen_range(lo..=hi))
}
