//! Deterministic moving-shape videos used as ground truth at desk scale.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tensorio::{save_clip, Space, VideoTensor};

pub const MIN_WIDTH: usize = 24;
const NOISE_AMPLITUDE: f32 = 0.02;
const FPS: f64 = 24.0;

/// Flat shape colors, far apart from each other and from the gradients below.
const PALETTE: [[f32; 3]; 8] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.75, 0.20],
    [0.15, 0.25, 0.95],
    [0.95, 0.90, 0.10],
    [0.85, 0.15, 0.85],
    [0.10, 0.85, 0.90],
    [0.98, 0.55, 0.05],
    [0.05, 0.05, 0.05],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_clips: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub n_shapes: usize,
    /// Range of |vx| in pixels/frame; the sign is drawn separately.
    pub velocity_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_clips: 20,
            frames: 20,
            width: 96,
            height: 56,
            n_shapes: 3,
            velocity_range: (1.0, 3.0),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_WIDTH {
            return Err(Error::Config(format!(
                "synthetic width {} is below the minimum {MIN_WIDTH}",
                self.width
            )));
        }
        if self.height == 0 || self.frames == 0 {
            return Err(Error::Config("synthetic frames and height must be positive".into()));
        }
        let (lo, hi) = self.velocity_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("bad velocity range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    /// Axis-aligned rectangle with top-left corner at the position.
    Rect { w: f64, h: f64 },
    /// Disc centered at the position.
    Circle { r: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub pos: (f64, f64),
    pub vel: (f64, f64),
    pub color: [f32; 3],
}

/// Background plus shapes; rendering is a pure function of the scene and frame index.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    /// `(3, H, W)` static background.
    pub background: Tensor<f32>,
    pub shapes: Vec<Shape>,
}

impl Scene {
    /// Horizontal gradient from `left` to `right`, no noise, no shapes.
    pub fn gradient(width: usize, height: usize, left: [f32; 3], right: [f32; 3]) -> Self {
        let denom = (width.max(2) - 1) as f32;
        let background = Tensor::from_fn(&[3, height, width], |i| {
            let a = i[2] as f32 / denom;
            left[i[0]] * (1.0 - a) + right[i[0]] * a
        });
        Self {
            width,
            height,
            background,
            shapes: Vec::new(),
        }
    }

    fn covers(&self, s: &Shape, t: usize, px: usize, py: usize) -> bool {
        let (w, h) = (self.width as f64, self.height as f64);
        let x0 = s.pos.0 + s.vel.0 * t as f64;
        let y0 = s.pos.1 + s.vel.1 * t as f64;
        let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
        // Offset of the pixel center from the shape anchor on the torus.
        let dx = (cx - x0).rem_euclid(w);
        let dy = (cy - y0).rem_euclid(h);
        match s.kind {
            ShapeKind::Rect { w: rw, h: rh } => dx < rw && dy < rh,
            ShapeKind::Circle { r } => {
                let ddx = dx.min(w - dx);
                let ddy = dy.min(h - dy);
                ddx * ddx + ddy * ddy <= r * r
            }
        }
    }

    /// Frame `t` as `(3, H, W)`; later shapes occlude earlier ones.
    pub fn render(&self, t: usize) -> Tensor<f32> {
        let mut out = self.background.clone();
        let plane = self.width * self.height;
        let data = out.data_mut();
        for y in 0..self.height {
            for x in 0..self.width {
                if let Some(s) = self.shapes.iter().rev().find(|s| self.covers(s, t, x, y)) {
                    for c in 0..3 {
                        data[c * plane + y * self.width + x] = s.color[c];
                    }
                }
            }
        }
        out
    }

    /// `(1, T, 3, H, W)` pixel video.
    pub fn render_video(&self, frames: usize) -> Result<VideoTensor> {
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(frames * 3 * h * w);
        for t in 0..frames {
            data.extend_from_slice(self.render(t).data());
        }
        VideoTensor::new(Tensor::from_vec(&[1, frames, 3, h, w], data)?, Space::Pixel)
    }

    /// Whether shape `i` covers any pixel in columns `cols` at frame `t`.
    pub fn shape_pixels_in(&self, i: usize, t: usize, cols: std::ops::Range<usize>) -> usize {
        let s = &self.shapes[i];
        cols.flat_map(|x| (0..self.height).map(move |y| (x, y)))
            .filter(|&(x, y)| self.covers(s, t, x, y))
            .count()
    }
}

/// Independent generator for clip `index`; equal for serial and parallel use.
pub fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Random scene for clip `index` of `spec`.
pub fn scene(spec: &SynthSpec, index: usize) -> Scene {
    let mut rng = clip_rng(spec.seed, index);
    let (w, h) = (spec.width, spec.height);
    let mut base = || [0.0f32; 3].map(|_| rng.gen_range(0.3..0.7));
    let (left, right) = (base(), base());
    let mut sc = Scene::gradient(w, h, left, right);
    for v in sc.background.data_mut() {
        *v = (*v + rng.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE)).clamp(0.0, 1.0);
    }
    let offset = rng.gen_range(0..PALETTE.len());
    let (vlo, vhi) = spec.velocity_range;
    let min_side = w.min(h) as f64;
    for i in 0..spec.n_shapes {
        let color = PALETTE[(offset + i) % PALETTE.len()];
        let kind = if rng.gen_bool(0.5) {
            ShapeKind::Rect {
                w: rng.gen_range(0.15..0.35) * min_side,
                h: rng.gen_range(0.15..0.35) * min_side,
            }
        } else {
            ShapeKind::Circle {
                r: rng.gen_range(0.08..0.18) * min_side,
            }
        };
        let speed = if vhi > vlo { rng.gen_range(vlo..=vhi) } else { vlo };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let vy = rng.gen_range(-0.25..=0.25) * vhi;
        sc.shapes.push(Shape {
            kind,
            pos: (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)),
            vel: (sign * speed, vy),
            color,
        });
    }
    sc
}

/// Write `spec.n_clips` clip directories `clip_0000`, ... under `out`.
pub fn generate(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let out = out.as_ref();
    (0..spec.n_clips)
        .map(|i| {
            let id = format!("clip_{i:04}");
            let dir = out.join(&id);
            let video = scene(spec, i).render_video(spec.frames)?;
            save_clip(&video, &dir, &id, FPS)?;
            Ok(dir)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::OutBands;
    use crate::tensorio::load_clip;

    fn centroid_x(frame: &Tensor<f32>, w: usize, h: usize, color: [f32; 3]) -> f64 {
        let plane = w * h;
        let d = frame.data();
        let (mut sum, mut n) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if (0..3).all(|c| d[c * plane + p] == color[c]) {
                    sum += x as f64;
                    n += 1.0;
                }
            }
        }
        assert!(n > 0.0);
        sum / n
    }

    #[test]
    fn no_shapes_is_static() {
        let spec = SynthSpec {
            n_shapes: 0,
            frames: 4,
            ..SynthSpec::default()
        };
        let v = scene(&spec, 3).render_video(4).unwrap();
        let f0 = v.frame_range(0, 1).unwrap();
        for t in 1..4 {
            assert_eq!(v.frame_range(t, 1).unwrap(), f0);
        }
    }

    #[test]
    fn centroid_advances_two_pixels_per_frame() {
        let mut sc = Scene::gradient(64, 32, [0.4; 3], [0.6; 3]);
        let color = PALETTE[0];
        sc.shapes.push(Shape {
            kind: ShapeKind::Circle { r: 5.0 },
            pos: (20.0, 16.0),
            vel: (2.0, 0.0),
            color,
        });
        let xs: Vec<f64> = (0..5).map(|t| centroid_x(&sc.render(t), 64, 32, color)).collect();
        for w in xs.windows(2) {
            assert_eq!(w[1] - w[0], 2.0);
        }
        sc.shapes[0].kind = ShapeKind::Rect { w: 7.0, h: 4.0 };
        let xs: Vec<f64> = (0..5).map(|t| centroid_x(&sc.render(t), 64, 32, color)).collect();
        for w in xs.windows(2) {
            assert_eq!(w[1] - w[0], 2.0);
        }
    }

    #[test]
    fn wraps_without_panicking() {
        let mut sc = Scene::gradient(24, 8, [0.5; 3], [0.5; 3]);
        sc.shapes.push(Shape {
            kind: ShapeKind::Rect { w: 30.0, h: 12.0 },
            pos: (-5.0, 6.0),
            vel: (-7.5, 3.0),
            color: PALETTE[1],
        });
        for t in 0..10 {
            assert!(sc.render(t).is_finite());
        }
    }

    #[test]
    fn byte_identical_output() {
        let spec = SynthSpec {
            n_clips: 2,
            frames: 3,
            width: 32,
            height: 16,
            ..SynthSpec::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let da = generate(&spec, a.path()).unwrap();
        let db = generate(&spec, b.path()).unwrap();
        for (x, y) in da.iter().zip(&db) {
            for f in 0..3 {
                let name = crate::tensorio::frame_file_name(f);
                let fa = std::fs::read(x.join("frames").join(&name)).unwrap();
                let fb = std::fs::read(y.join("frames").join(&name)).unwrap();
                assert_eq!(fa, fb);
            }
        }
        let v = load_clip(&da[1]).unwrap();
        assert_eq!(v.dims(), [1, 3, 3, 16, 32]);
    }

    #[test]
    fn moving_shapes_enter_the_bands() {
        let spec = SynthSpec {
            n_shapes: 1,
            velocity_range: (2.0, 2.0),
            ..SynthSpec::default()
        };
        let bands = OutBands::for_width(0.25, spec.width).unwrap();
        for clip in 0..5 {
            let sc = scene(&spec, clip);
            let inside: usize = (0..spec.width)
                .map(|t| {
                    sc.shape_pixels_in(0, t, bands.left()) + sc.shape_pixels_in(0, t, bands.right())
                })
                .sum();
            assert!(inside > 0, "clip {clip}");
        }
    }

    #[test]
    fn rejects_narrow_frames() {
        let spec = SynthSpec {
            width: 16,
            ..SynthSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
