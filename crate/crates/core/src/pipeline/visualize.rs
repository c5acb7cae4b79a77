//! Debug rasters: class labels, superpixel boundaries, seeds and flow color.

use std::path::Path;

use image::{ImageBuffer, Luma};

use super::ComputeOutput;
use crate::descriptors::LabelMap;
use crate::error::{ensure, Error, Result};
use crate::imagery::{flow_to_color, wheel_color, Image, MaxMagnitude};
use crate::sparse_match::SeedSet;
use crate::superpixel::SuperpixelMap;

const BOUNDARY: [f32; 3] = [1.0, 0.0, 0.0];

/// Class labels as a row-major raster of raw indices.
pub fn label_raster(labels: &LabelMap) -> Vec<u16> {
    labels.labels().to_vec()
}

/// Writes the labels as a 16-bit grayscale PNG whose sample values are the
/// class indices, so the file decodes back to the exact [`LabelMap`].
pub fn write_label_png(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, label_raster(labels))
            .ok_or_else(|| Error::Internal("label buffer size".into()))?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// `image` with every superpixel boundary pixel painted red. A pixel is on a
/// boundary when its right or lower neighbour belongs to a different
/// superpixel (or to none) while it belongs to one.
pub fn superpixel_boundaries(image: &Image, maps: &[SuperpixelMap]) -> Result<Image> {
    let (w, h) = (image.width(), image.height());
    ensure!(
        maps.iter().all(|m| m.width == w && m.height == h),
        "superpixel maps do not match the image size"
    );
    // Ids unique across maps: (map position + 1, superpixel id).
    let mut owner: Vec<Option<(usize, u32)>> = vec![None; w * h];
    for (k, m) in maps.iter().enumerate() {
        for (o, r) in owner.iter_mut().zip(&m.raster) {
            if let Some(id) = r {
                *o = Some((k, *id));
            }
        }
    }
    Ok(Image::from_fn(w, h, |x, y| {
        let own = owner[y * w + x];
        let differs = |xx: usize, yy: usize| xx < w && yy < h && owner[yy * w + xx] != own;
        if own.is_some() && (differs(x + 1, y) || differs(x, y + 1)) {
            BOUNDARY
        } else {
            image.pixel(x, y)
        }
    }))
}

/// Black raster with each seed's frame-1 pixel set to its flow color; every
/// wheel color has a saturated channel, so the nonzero pixels are exactly
/// the seeds.
pub fn seed_overlay(width: usize, height: usize, seeds: &SeedSet) -> Result<Image> {
    let mut data = vec![0.0f32; width * height * 3];
    let flows: Vec<(f64, f64)> = seeds.seeds().iter().map(|s| s.matched.flow()).collect();
    let max = flows.iter().map(|(u, v)| u.hypot(*v)).fold(0.0, f64::max);
    for (s, (u, v)) in seeds.seeds().iter().zip(flows) {
        let (x, y) = (s.matched.x1, s.matched.y1);
        ensure!(x < width && y < height, "seed ({x}, {y}) outside {width}x{height}");
        let radius = if max > 0.0 { (u.hypot(v) / max) as f32 } else { 0.0 };
        let c = wheel_color((v as f32).atan2(u as f32), radius);
        data[(y * width + x) * 3..][..3].copy_from_slice(&c);
    }
    Image::new(width, height, data)
}

/// Writes `labels.png`, `superpixels.png`, `seeds.png` and `flow.png` into
/// `dir`, creating it if needed.
pub fn write_visualizations(dir: impl AsRef<Path>, out: &ComputeOutput, img1: &Image) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_label_png(&out.labels, dir.join("labels.png"))?;
    superpixel_boundaries(img1, &out.superpixels)?.save_png(dir.join("superpixels.png"))?;
    seed_overlay(img1.width(), img1.height(), &out.seeds)?.save_png(dir.join("seeds.png"))?;
    flow_to_color(&out.flow, MaxMagnitude::Auto).save_png(dir.join("flow.png"))
}
