//! Video tensors and their on-disk forms: clip directories of PNG frames and
//! `.vten` fixtures.
//!
//! A `.vten` file is the magic `VTEN1`, the axis count as `u32`, each axis
//! length as `u32`, then the elements as `f32`, all little-endian, row-major.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

pub const FIXTURE_MAGIC: &[u8; 5] = b"VTEN1";
pub const FIXTURE_EXT: &str = "vten";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAMES_DIR: &str = "frames";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Pixel,
    Feature,
}

/// 5-axis `(batch, frames, channels, height, width)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    data: Tensor<f32>,
    space: Space,
}

impl VideoTensor {
    pub fn new(data: Tensor<f32>, space: Space) -> Result<Self> {
        if data.ndim() != 5 {
            return Err(Error::Shape(format!(
                "video tensor needs 5 axes, got {:?}",
                data.shape()
            )));
        }
        if data.shape().contains(&0) {
            return Err(Error::Shape(format!(
                "video tensor axes must be non-empty, got {:?}",
                data.shape()
            )));
        }
        if space == Space::Pixel {
            if let Some(v) = data.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Range(format!("pixel value {v} outside [0,1]")));
            }
        }
        Ok(Self { data, space })
    }

    pub fn zeros(shape: [usize; 5], space: Space) -> Self {
        Self::new(Tensor::zeros(&shape), space).expect("zeros are valid in any space")
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dims(&self) -> [usize; 5] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3], s[4]]
    }

    pub fn batch(&self) -> usize {
        self.dims()[0]
    }
    pub fn frames(&self) -> usize {
        self.dims()[1]
    }
    pub fn channels(&self) -> usize {
        self.dims()[2]
    }
    pub fn height(&self) -> usize {
        self.dims()[3]
    }
    pub fn width(&self) -> usize {
        self.dims()[4]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.data
    }

    pub fn get(&self, b: usize, t: usize, c: usize, y: usize, x: usize) -> f32 {
        let [_, nt, nc, nh, nw] = self.dims();
        self.data.data()[(((b * nt + t) * nc + c) * nh + y) * nw + x]
    }

    /// Frames `[start, start+len)` of every batch entry.
    pub fn frame_range(&self, start: usize, len: usize) -> Result<Self> {
        Self::new(self.data.narrow(1, start, len)?, self.space)
    }

    /// Stack along the frame axis.
    pub fn concat_frames(parts: &[&Self]) -> Result<Self> {
        let space = parts.first().map(|p| p.space).unwrap_or(Space::Feature);
        let ts: Vec<&Tensor<f32>> = parts.iter().map(|p| &p.data).collect();
        Self::new(Tensor::concat(&ts, 1)?, space)
    }

    /// Stack along the batch axis.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let space = parts.first().map(|p| p.space).unwrap_or(Space::Feature);
        let ts: Vec<&Tensor<f32>> = parts.iter().map(|p| &p.data).collect();
        Self::new(Tensor::concat(&ts, 0)?, space)
    }
}

pub fn save_fixture(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(9 + 4 * t.ndim());
    header.extend_from_slice(FIXTURE_MAGIC);
    header.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Fixture {
            path: path.to_path_buf(),
            reason: format!("axis length {d} exceeds u32"),
        })?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&header).at(path)?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes()).at(path)?;
    }
    w.flush().at(path)
}

pub fn load_fixture(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).at(path)?;
    decode_fixture(&bytes).map_err(|reason| Error::Fixture {
        path: path.to_path_buf(),
        reason,
    })
}

fn decode_fixture(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    if bytes.len() < FIXTURE_MAGIC.len() || &bytes[..FIXTURE_MAGIC.len()] != FIXTURE_MAGIC {
        return Err("magic mismatch".into());
    }
    let mut pos = FIXTURE_MAGIC.len();
    let next_u32 = |pos: &mut usize| -> std::result::Result<u32, String> {
        let chunk = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| "truncated header".to_string())?;
        *pos += 4;
        Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
    };
    let ndim = next_u32(&mut pos)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(next_u32(&mut pos)? as usize);
    }
    let n: usize = shape.iter().product();
    let payload = &bytes[pos..];
    if payload.len() < 4 * n {
        return Err(format!(
            "truncated payload: {} bytes for {} elements",
            payload.len(),
            n
        ));
    }
    if payload.len() > 4 * n {
        return Err(format!(
            "{} trailing bytes after payload",
            payload.len() - 4 * n
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&shape, data).map_err(|e| e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub clip_id: String,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    pub fps: f64,
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<ClipManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Clip {
        path: path.clone(),
        reason: format!("missing manifest: {e}"),
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

/// Load a clip directory as a `(1, T, 3, H, W)` pixel tensor scaled to `[0,1]`.
pub fn load_clip(dir: impl AsRef<Path>) -> Result<VideoTensor> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let frames_dir = dir.join(FRAMES_DIR);
    let on_disk = fs::read_dir(&frames_dir)
        .at(&frames_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
        .count();
    let clip_err = |reason: String| Error::Clip {
        path: dir.to_path_buf(),
        reason,
    };
    if on_disk != manifest.frame_count {
        return Err(clip_err(format!(
            "manifest lists {} frames, found {}",
            manifest.frame_count, on_disk
        )));
    }
    if manifest.frame_count == 0 {
        return Err(clip_err("clip has no frames".into()));
    }
    let (w, h) = (manifest.width, manifest.height);
    let plane = (w * h) as usize;
    let mut data = Vec::with_capacity(manifest.frame_count * 3 * plane);
    for i in 0..manifest.frame_count {
        let path = frames_dir.join(frame_file_name(i));
        let img = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        if img.dimensions() != (w, h) {
            return Err(clip_err(format!(
                "frame {i} is {}x{}, manifest says {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        let raw = img.as_raw();
        for c in 0..3 {
            data.extend((0..plane).map(|p| raw[p * 3 + c] as f32 / 255.0));
        }
    }
    let t = Tensor::from_vec(&[1, manifest.frame_count, 3, h as usize, w as usize], data)?;
    VideoTensor::new(t, Space::Pixel)
}

/// Write batch entry 0 of a pixel video as a clip directory of 8-bit PNG frames.
pub fn save_clip(
    video: &VideoTensor,
    dir: impl AsRef<Path>,
    clip_id: &str,
    fps: f64,
) -> Result<ClipManifest> {
    let dir = dir.as_ref();
    let [_, t, c, h, w] = video.dims();
    if c != 3 {
        return Err(Error::Shape(format!("clip frames need 3 channels, got {c}")));
    }
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).at(&frames_dir)?;
    for f in 0..t {
        let img = ImageBuffer::<Rgb<u8>, Vec<u8>>::from_fn(w as u32, h as u32, |x, y| {
            let px = |ch| quantize(video.get(0, f, ch, y as usize, x as usize));
            Rgb([px(0), px(1), px(2)])
        });
        let path = frames_dir.join(frame_file_name(f));
        img.save(&path).map_err(|source| Error::Image { path, source })?;
    }
    let manifest = ClipManifest {
        clip_id: clip_id.to_string(),
        width: w as u32,
        height: h as u32,
        frame_count: t,
        fps,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).at(&path)?;
    Ok(manifest)
}

/// Resize every frame to `width × height` with a triangle (bilinear) filter.
pub fn resize_video(video: &VideoTensor, width: usize, height: usize) -> Result<VideoTensor> {
    let [b, t, c, h, w] = video.dims();
    if (w, h) == (width, height) {
        return Ok(video.clone());
    }
    if c != 3 {
        return Err(Error::Shape(format!("resize needs 3 channels, got {c}")));
    }
    let plane = h * w;
    let src = video.tensor().data();
    let mut out = Vec::with_capacity(b * t * 3 * width * height);
    for f in 0..b * t {
        let base = f * 3 * plane;
        let img = ImageBuffer::<Rgb<f32>, Vec<f32>>::from_fn(w as u32, h as u32, |x, y| {
            let p = y as usize * w + x as usize;
            Rgb([src[base + p], src[base + plane + p], src[base + 2 * plane + p]])
        });
        let r = image::imageops::resize(&img, width as u32, height as u32, FilterType::Triangle);
        for ch in 0..3 {
            out.extend(r.pixels().map(|px| px.0[ch].clamp(0.0, 1.0)));
        }
    }
    VideoTensor::new(
        Tensor::from_vec(&[b, t, 3, height, width], out)?,
        video.space(),
    )
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Clip directories directly under `root` (those holding a manifest), sorted by name.
pub fn list_clips(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .at(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}
