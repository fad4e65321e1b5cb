//! 3-D cross-correlation over `(B, T, C, H, W)` tensors via per-frame im2col.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar};

/// One 3-D convolution layer. Kernel, stride and padding are `(t, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conv3dSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dSpec {
    /// Layer with "same-like" padding `floor(k/2)` on every axis.
    pub fn new(in_ch: usize, out_ch: usize, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding: kernel.map(|k| k / 2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0
            || self.out_ch == 0
            || self.kernel.contains(&0)
            || self.stride.contains(&0)
        {
            return Err(Error::Config(format!(
                "conv spec needs positive channels, kernel and stride: {self:?}"
            )));
        }
        Ok(())
    }

    /// `floor((n + 2p − k)/s) + 1` per axis.
    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::Shape(format!(
                    "input extent {} (padded {}) smaller than kernel {} on axis {}",
                    input[a], padded, self.kernel[a], a
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [
            self.out_ch,
            self.in_ch,
            self.kernel[0],
            self.kernel[1],
            self.kernel[2],
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel.iter().product::<usize>()
    }
}

/// Resolved sizes for one conv application.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub spec: Conv3dSpec,
    pub batch: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

impl ConvGeom {
    pub fn new(spec: Conv3dSpec, x_shape: &[usize]) -> Result<Self> {
        spec.validate()?;
        if x_shape.len() != 5 {
            return Err(Error::Shape(format!("conv3d input {x_shape:?} is not 5-D")));
        }
        if x_shape[2] != spec.in_ch {
            return Err(Error::Shape(format!(
                "conv3d expects {} input channels, got {}",
                spec.in_ch, x_shape[2]
            )));
        }
        let input = [x_shape[1], x_shape[3], x_shape[4]];
        Ok(Self {
            spec,
            batch: x_shape[0],
            input,
            output: spec.out_dims(input)?,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.output[0],
            self.spec.out_ch,
            self.output[1],
            self.output[2],
        ]
    }

    fn k(&self) -> usize {
        self.spec.fan_in()
    }

    fn p(&self) -> usize {
        self.output[1] * self.output[2]
    }

    fn in_frame(&self) -> usize {
        self.spec.in_ch * self.input[1] * self.input[2]
    }

    fn out_frame(&self) -> usize {
        self.spec.out_ch * self.p()
    }

    /// Input frame feeding kernel tap `dt` of output frame `to`, if in range.
    fn src_frame(&self, to: usize, dt: usize) -> Option<usize> {
        let it = (to * self.spec.stride[0] + dt) as isize - self.spec.padding[0] as isize;
        (it >= 0 && (it as usize) < self.input[0]).then_some(it as usize)
    }

    /// Fill `col` (K×P) for output frame `to` of batch entry `b`.
    fn im2col<T: Scalar>(&self, x: &[T], b: usize, to: usize, col: &mut [T]) {
        let s = &self.spec;
        let [_, kh, kw] = s.kernel;
        let [_, ih_n, iw_n] = self.input;
        let [_, oh_n, ow_n] = self.output;
        let p = self.p();
        let mut row = 0;
        for ci in 0..s.in_ch {
            for dt in 0..s.kernel[0] {
                let frame = self.src_frame(to, dt).map(|it| {
                    let base = ((b * self.input[0] + it) * s.in_ch + ci) * ih_n * iw_n;
                    &x[base..base + ih_n * iw_n]
                });
                for dh in 0..kh {
                    for dw in 0..kw {
                        let dst = &mut col[row * p..(row + 1) * p];
                        row += 1;
                        let Some(plane) = frame else {
                            dst.fill(T::zero());
                            continue;
                        };
                        for oh in 0..oh_n {
                            let line = &mut dst[oh * ow_n..(oh + 1) * ow_n];
                            let ih = (oh * s.stride[1] + dh) as isize - s.padding[1] as isize;
                            if ih < 0 || ih as usize >= ih_n {
                                line.fill(T::zero());
                                continue;
                            }
                            let src = &plane[ih as usize * iw_n..(ih as usize + 1) * iw_n];
                            for (ow, v) in line.iter_mut().enumerate() {
                                let iw = (ow * s.stride[2] + dw) as isize - s.padding[2] as isize;
                                *v = if iw >= 0 && (iw as usize) < iw_n {
                                    src[iw as usize]
                                } else {
                                    T::zero()
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `col` (K×P) back into `dx` for output frame `to` of entry `b`.
    fn col2im<T: Scalar>(&self, col: &[T], b: usize, to: usize, dx: &mut [T]) {
        let s = &self.spec;
        let [_, kh, kw] = s.kernel;
        let [_, ih_n, iw_n] = self.input;
        let [_, oh_n, ow_n] = self.output;
        let p = self.p();
        let mut row = 0;
        for ci in 0..s.in_ch {
            for dt in 0..s.kernel[0] {
                let it = self.src_frame(to, dt);
                for dh in 0..kh {
                    for dw in 0..kw {
                        let src = &col[row * p..(row + 1) * p];
                        row += 1;
                        let Some(it) = it else { continue };
                        let base = ((b * self.input[0] + it) * s.in_ch + ci) * ih_n * iw_n;
                        for oh in 0..oh_n {
                            let ih = (oh * s.stride[1] + dh) as isize - s.padding[1] as isize;
                            if ih < 0 || ih as usize >= ih_n {
                                continue;
                            }
                            let dst = &mut dx[base + ih as usize * iw_n..][..iw_n];
                            for (ow, &g) in src[oh * ow_n..(oh + 1) * ow_n].iter().enumerate() {
                                let iw = (ow * s.stride[2] + dw) as isize - s.padding[2] as isize;
                                if iw >= 0 && (iw as usize) < iw_n {
                                    dst[iw as usize] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Scalar>(&self, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
        let (k, p, cout) = (self.k(), self.p(), self.spec.out_ch);
        let mut out = vec![T::zero(); self.batch * self.output[0] * self.out_frame()];
        let mut col = vec![T::zero(); k * p];
        for b in 0..self.batch {
            for to in 0..self.output[0] {
                self.im2col(x, b, to, &mut col);
                let dst = &mut out[(b * self.output[0] + to) * self.out_frame()..][..self.out_frame()];
                matmul(w, false, &col, false, dst, (cout, k, p), false);
                if let Some(bias) = bias {
                    for (co, &bv) in bias.iter().enumerate() {
                        dst[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
                    }
                }
            }
        }
        out
    }

    /// Accumulate gradients for whichever of `dx`, `dw`, `db` are requested.
    pub fn backward<T: Scalar>(
        &self,
        x: &[T],
        w: &[T],
        dout: &[T],
        mut dx: Option<&mut [T]>,
        mut dw: Option<&mut [T]>,
        mut db: Option<&mut [T]>,
    ) {
        let (k, p, cout) = (self.k(), self.p(), self.spec.out_ch);
        let mut col = vec![T::zero(); k * p];
        for b in 0..self.batch {
            for to in 0..self.output[0] {
                let g = &dout[(b * self.output[0] + to) * self.out_frame()..][..self.out_frame()];
                if let Some(db) = db.as_deref_mut() {
                    for co in 0..cout {
                        db[co] += g[co * p..(co + 1) * p].iter().copied().sum();
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    self.im2col(x, b, to, &mut col);
                    matmul(g, false, &col, true, dw, (cout, p, k), true);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    matmul(w, true, g, false, &mut col, (k, cout, p), false);
                    self.col2im(&col, b, to, dx);
                }
            }
        }
        debug_assert!(dx.is_none() || x.len() == self.batch * self.input[0] * self.in_frame());
    }
}
