//! Images, flow fields, their on-disk formats, color coding, and metrics.

mod color;
mod flo;
mod kitti;
mod metrics;

use std::path::Path;

use crate::error::{ensure, Error, Result};

pub use color::{flow_to_color, wheel_color, MaxMagnitude};
pub use flo::{read_flow_flo, write_flow_flo, FLO_MAGIC, FLO_UNKNOWN_THRESHOLD, FLO_UNKNOWN_VALUE};
pub use kitti::{read_flow_kitti, write_flow_kitti};
pub use metrics::{epe, epe_masked, fi_rate, fi_rate_masked, flow_metrics, FlowMetrics};

/// RGB raster with interleaved `f32` samples, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(width >= 1 && height >= 1, "image must be at least 1x1");
        ensure!(
            data.len() == width * height * 3,
            "image buffer has {} samples, expected {}",
            data.len(),
            width * height * 3
        );
        ensure!(data.iter().all(|v| v.is_finite()), "image samples must be finite");
        Ok(Image { width, height, data })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(width >= 1 && height >= 1, "image must be at least 1x1");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image { width, height, data }
    }

    /// Loads a lossless raster (8- or 16-bit) and normalizes it to `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.into_rgb32f();
        let (w, h) = rgb.dimensions();
        Image::new(w as usize, h as usize, rgb.into_raw())
    }

    /// Writes the image as an 8-bit RGB PNG, clamping samples to `[0, 1]`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn pixel_at(&self, idx: usize) -> [f32; 3] {
        let i = idx * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Grayscale as the unweighted channel mean.
    pub fn gray(&self) -> Vec<f32> {
        self.data.chunks_exact(3).map(|c| (c[0] + c[1] + c[2]) / 3.0).collect()
    }

    /// One channel as a contiguous plane.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.data.chunks_exact(3).map(|p| p[c]).collect()
    }
}

/// Dense 2D displacement field with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        FlowField {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            valid: vec![true; n],
        }
    }

    pub fn from_parts(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        ensure!(width >= 1 && height >= 1, "flow field must be at least 1x1");
        ensure!(
            u.len() == n && v.len() == n && valid.len() == n,
            "flow buffers do not match {width}x{height}"
        );
        let finite = valid
            .iter()
            .zip(u.iter().zip(&v))
            .all(|(&ok, (a, b))| !ok || (a.is_finite() && b.is_finite()));
        ensure!(finite, "valid flow samples must be finite");
        Ok(FlowField {
            width,
            height,
            u,
            v,
            valid,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut flow = FlowField::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                flow.set(x, y, a, b);
            }
        }
        flow
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Stores a valid vector at `(x, y)`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
        self.valid[i] = true;
    }

    pub fn set_invalid(&mut self, x: usize, y: usize) {
        let i = y * self.width + x;
        self.u[i] = 0.0;
        self.v[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Same field with every vector negated.
    pub fn negated(&self) -> FlowField {
        FlowField {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|a| -a).collect(),
            v: self.v.iter().map(|a| -a).collect(),
            valid: self.valid.clone(),
        }
    }
}

/// Reads a flow file, choosing the codec from the extension (`.flo` or `.png`).
pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("flo") => read_flow_flo(path),
        Some("png") => read_flow_kitti(path),
        _ => Err(Error::format(path, "unknown flow extension (expected .flo or .png)")),
    }
}

/// Writes a flow file, choosing the codec from the extension (`.flo` or `.png`).
pub fn write_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("flo") => write_flow_flo(flow, path),
        Some("png") => write_flow_kitti(flow, path),
        _ => Err(Error::format(path, "unknown flow extension (expected .flo or .png)")),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}
