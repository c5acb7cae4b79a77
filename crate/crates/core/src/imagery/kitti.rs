//! KITTI 2015 flow rasters: 16-bit RGB PNG with `u = (r - 2^15) / 64`,
//! `v = (g - 2^15) / 64` and `b` as the validity flag.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use super::FlowField;
use crate::error::{Error, Result};

const OFFSET: f32 = 32768.0;
const SCALE: f32 = 64.0;

pub fn read_flow_kitti(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = match img {
        DynamicImage::ImageRgb16(buf) => buf,
        DynamicImage::ImageRgba16(buf) => DynamicImage::ImageRgba16(buf).into_rgb16(),
        other => {
            return Err(Error::format(
                path,
                format!("KITTI flow must be 16-bit RGB, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = rgb.dimensions();
    let n = (w * h) as usize;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for px in rgb.pixels() {
        let [r, g, b] = px.0;
        u.push((r as f32 - OFFSET) / SCALE);
        v.push((g as f32 - OFFSET) / SCALE);
        valid.push(b > 0);
    }
    FlowField::from_parts(w as usize, h as usize, u, v, valid)
}

/// Writes a KITTI raster; vectors are quantized to 1/64 px and clamped to the
/// representable range.
pub fn write_flow_kitti(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::new(flow.width() as u32, flow.height() as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        *px = if flow.valid()[i] {
            Rgb([quantize(flow.u()[i]), quantize(flow.v()[i]), 1])
        } else {
            Rgb([OFFSET as u16, OFFSET as u16, 0])
        };
    }
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn quantize(value: f32) -> u16 {
    (value as f64 * SCALE as f64 + OFFSET as f64)
        .round()
        .clamp(0.0, 65535.0) as u16
}
