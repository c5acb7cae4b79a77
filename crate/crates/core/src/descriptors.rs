//! Dense rootSIFT-style descriptors, argmax pixel classes, color statistics.
//!
//! Every pixel gets a histogram of gradient orientations over a square patch
//! centred on it: `cells x cells` spatial cells times `bins` orientation bins
//! (4 x 4 x 8 = 128 by default). Patch cells live on continuous coordinates
//! centred on the pixel, so pixels straddling a cell border split their vote.
//! This keeps the descriptor symmetric under 90 degree rotations and exactly
//! translation-equivariant away from the border.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::imagery::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorParams {
    /// Patch side length in pixels; must be divisible by `cells`.
    pub patch_size: usize,
    /// Spatial cells per patch side.
    pub cells: usize,
    /// Orientation bins per cell.
    pub bins: usize,
    /// Gaussian window sigma in pixels.
    pub sigma: f32,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        DescriptorParams {
            patch_size: 16,
            cells: 4,
            bins: 8,
            sigma: 8.0,
        }
    }
}

impl DescriptorParams {
    pub fn dims(&self) -> usize {
        self.cells * self.cells * self.bins
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.cells >= 1 && self.bins >= 1, "cells and bins must be positive");
        ensure!(
            self.patch_size >= self.cells && self.patch_size.is_multiple_of(self.cells),
            "patch_size {} must be a positive multiple of cells {}",
            self.patch_size,
            self.cells
        );
        ensure!(self.sigma > 0.0 && self.sigma.is_finite(), "sigma must be positive");
        Ok(())
    }
}

/// Per-pixel descriptor vectors stored pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorField {
    width: usize,
    height: usize,
    dims: usize,
    data: Vec<f32>,
}

impl DescriptorField {
    pub fn new(width: usize, height: usize, dims: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(dims >= 1, "descriptor dims must be positive");
        ensure!(
            data.len() == width * height * dims,
            "descriptor buffer has {} values, expected {}",
            data.len(),
            width * height * dims
        );
        ensure!(data.iter().all(|v| v.is_finite()), "descriptors must be finite");
        Ok(DescriptorField {
            width,
            height,
            dims,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Descriptor of pixel `idx = y * width + x`.
    #[inline]
    pub fn at(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.dims..(idx + 1) * self.dims]
    }

    #[inline]
    pub fn at_xy(&self, x: usize, y: usize) -> &[f32] {
        self.at(y * self.width + x)
    }

    /// Applies `g` to every channel value.
    pub fn map_values(&self, g: impl Fn(f32) -> f32) -> Result<DescriptorField> {
        DescriptorField::new(
            self.width,
            self.height,
            self.dims,
            self.data.iter().map(|&v| g(v)).collect(),
        )
    }
}

/// Reflect-101 border index: `-1 -> 1`, `n -> n - 2`.
#[inline]
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Central-difference gradients of a plane with mirrored borders.
pub(crate) fn gradients(plane: &[f32], width: usize, height: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0; plane.len()];
    let mut gy = vec![0.0; plane.len()];
    for y in 0..height {
        let up = mirror(y as isize - 1, height) * width;
        let down = mirror(y as isize + 1, height) * width;
        for x in 0..width {
            let left = mirror(x as isize - 1, width);
            let right = mirror(x as isize + 1, width);
            let i = y * width + x;
            gx[i] = 0.5 * (plane[y * width + right] - plane[y * width + left]);
            gy[i] = 0.5 * (plane[down + x] - plane[up + x]);
        }
    }
    (gx, gy)
}

/// Signed tap offsets and per-cell weights along one patch axis.
///
/// Cell `c` spans `[-half + c*cell, -half + (c+1)*cell]` in continuous
/// coordinates; pixel offset `d` covers `[d - 0.5, d + 0.5]` and contributes
/// its overlap with the cell times the Gaussian window at `d`.
pub(crate) fn cell_taps(params: &DescriptorParams) -> Vec<Vec<(isize, f32)>> {
    let half = params.patch_size as f32 / 2.0;
    let cell = params.patch_size as f32 / params.cells as f32;
    let reach = (half + 0.5).floor() as isize;
    (0..params.cells)
        .map(|c| {
            let lo = -half + c as f32 * cell;
            let hi = lo + cell;
            (-reach..=reach)
                .filter_map(|d| {
                    let df = d as f32;
                    let overlap = (hi.min(df + 0.5) - lo.max(df - 0.5)).max(0.0);
                    if overlap <= 0.0 {
                        return None;
                    }
                    let g = (-(df * df) / (2.0 * params.sigma * params.sigma)).exp();
                    Some((d, overlap * g))
                })
                .collect()
        })
        .collect()
}

/// Splits each gradient's magnitude between its two nearest orientation bins.
fn orientation_planes(gx: &[f32], gy: &[f32], bins: usize) -> Vec<Vec<f32>> {
    let mut planes = vec![vec![0.0f32; gx.len()]; bins];
    for (i, (&a, &b)) in gx.iter().zip(gy).enumerate() {
        let mag = a.hypot(b);
        if mag == 0.0 {
            continue;
        }
        let pos = (b.atan2(a) / std::f32::consts::TAU * bins as f32).rem_euclid(bins as f32);
        let b0 = (pos.floor() as usize) % bins;
        let frac = pos - pos.floor();
        planes[b0][i] += mag * (1.0 - frac);
        planes[(b0 + 1) % bins][i] += mag * frac;
    }
    planes
}

/// L1-normalizes then takes the elementwise square root. Zero stays zero.
pub(crate) fn root_normalize(desc: &mut [f32]) {
    let sum: f32 = desc.iter().sum();
    if sum <= 0.0 {
        desc.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    desc.iter_mut().for_each(|v| *v = (*v / sum).sqrt());
}

/// Dense per-pixel descriptors on the grayscale image.
pub fn dense_descriptors(image: &Image, params: &DescriptorParams) -> Result<DescriptorField> {
    params.validate()?;
    let (w, h) = (image.width(), image.height());
    ensure!(
        w >= params.patch_size && h >= params.patch_size,
        "image {w}x{h} is smaller than the {p}x{p} patch",
        p = params.patch_size
    );
    let taps = cell_taps(params);
    let reach = taps.iter().flatten().map(|&(d, _)| d.unsigned_abs()).max().unwrap_or(0);
    // Mirror-pad the image itself so border gradients see the reflected image.
    let pad = reach + 1;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let gray = image.gray();
    let padded: Vec<f32> = (0..ph)
        .flat_map(|y| {
            let sy = mirror(y as isize - pad as isize, h);
            let gray = &gray;
            (0..pw).map(move |x| gray[sy * w + mirror(x as isize - pad as isize, w)])
        })
        .collect();
    let (gx, gy) = gradients(&padded, pw, ph);
    let planes = orientation_planes(&gx, &gy, params.bins);
    let (cells, bins) = (params.cells, params.bins);
    let dims = params.dims();

    // Horizontal pass: one (w x ph) plane per (bin, cell column).
    let horizontal: Vec<Vec<f32>> = (0..bins * cells)
        .into_par_iter()
        .map(|k| {
            let (b, cx) = (k / cells, k % cells);
            let src = &planes[b];
            let mut out = vec![0.0f32; w * ph];
            for y in 0..ph {
                let dst = &mut out[y * w..(y + 1) * w];
                for &(d, wt) in &taps[cx] {
                    let start = (y * pw + pad) as isize + d;
                    let src = &src[start as usize..start as usize + w];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o += wt * s;
                    }
                }
            }
            out
        })
        .collect();

    // Vertical pass per output row, then normalization.
    let mut data = vec![0.0f32; w * h * dims];
    data.par_chunks_mut(w * dims).enumerate().for_each(|(y, row_out)| {
        let mut cell_row = vec![0.0f32; w];
        for cy in 0..cells {
            for cx in 0..cells {
                for b in 0..bins {
                    let plane = &horizontal[b * cells + cx];
                    cell_row.iter_mut().for_each(|v| *v = 0.0);
                    for &(d, wt) in &taps[cy] {
                        let src = &plane[((y + pad) as isize + d) as usize * w..][..w];
                        for (o, &s) in cell_row.iter_mut().zip(src) {
                            *o += wt * s;
                        }
                    }
                    let slot = (cy * cells + cx) * bins + b;
                    for (x, &v) in cell_row.iter().enumerate() {
                        row_out[x * dims + slot] = v;
                    }
                }
            }
        }
        for desc in row_out.chunks_exact_mut(dims) {
            root_normalize(desc);
        }
    });
    DescriptorField::new(w, h, dims, data)
}

/// Per-pixel class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    classes: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, classes: usize, labels: Vec<u16>) -> Result<Self> {
        ensure!(labels.len() == width * height, "label buffer size mismatch");
        ensure!(
            labels.iter().all(|&l| (l as usize) < classes),
            "label index out of range 0..{classes}"
        );
        Ok(LabelMap {
            width,
            height,
            classes,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of possible classes (the descriptor dimensionality).
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }
}

/// Index of the largest channel after ReLU; ties go to the lowest index.
///
/// The sigmoid/softmax stages of the classifier are strictly increasing and
/// cannot change the argmax, so they are not evaluated.
pub fn classify_pixels(field: &DescriptorField) -> LabelMap {
    assert!(field.dims() <= u16::MAX as usize + 1);
    let labels = field
        .data()
        .chunks_exact(field.dims())
        .map(|d| {
            let mut best = 0usize;
            let mut best_val = d[0].max(0.0);
            for (i, &v) in d.iter().enumerate().skip(1) {
                let v = v.max(0.0);
                if v > best_val {
                    best = i;
                    best_val = v;
                }
            }
            best as u16
        })
        .collect();
    LabelMap {
        width: field.width(),
        height: field.height(),
        classes: field.dims(),
        labels,
    }
}

/// Channel means and population standard deviations of a pixel region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ColorStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ColorStats {
    /// The `<mu_r, mu_g, mu_b, sigma_r, sigma_g, sigma_b>` vector.
    pub fn as_vector(&self) -> [f64; 6] {
        [
            self.mean[0],
            self.mean[1],
            self.mean[2],
            self.std[0],
            self.std[1],
            self.std[2],
        ]
    }

    /// L1 distance between the 6-vectors.
    pub fn l1(&self, other: &ColorStats) -> f64 {
        self.as_vector()
            .iter()
            .zip(other.as_vector())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Per-channel Gaussian fit over `region` (pixel indices `y * width + x`).
pub fn color_stats(image: &Image, region: &[usize]) -> Result<ColorStats> {
    ensure!(!region.is_empty(), "color_stats needs a nonempty region");
    // Welford running moments.
    let mut mean = [0.0f64; 3];
    let mut m2 = [0.0f64; 3];
    for (k, &idx) in region.iter().enumerate() {
        ensure!(idx < image.len(), "pixel index {idx} outside image");
        let px = image.pixel_at(idx);
        let n = (k + 1) as f64;
        for c in 0..3 {
            let x = px[c] as f64;
            let delta = x - mean[c];
            mean[c] += delta / n;
            m2[c] += delta * (x - mean[c]);
        }
    }
    let n = region.len() as f64;
    Ok(ColorStats {
        mean,
        std: m2.map(|s| (s / n).max(0.0).sqrt()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

pub fn descriptor_distance(a: &[f32], b: &[f32], norm: Norm) -> Result<f64> {
    ensure!(a.len() == b.len(), "descriptor dims differ: {} vs {}", a.len(), b.len());
    let pairs = a.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64);
    Ok(match norm {
        Norm::L1 => pairs.map(f64::abs).sum(),
        Norm::L2 => pairs.map(|d| d * d).sum::<f64>().sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    /// Histogram computed straight from the definition, one patch pixel at a time.
    fn direct_descriptor(img: &Image, params: &DescriptorParams, px: usize, py: usize) -> Vec<f32> {
        let (w, h) = (img.width(), img.height());
        let gray = img.gray();
        let at = |x: isize, y: isize| gray[mirror(y, h) * w + mirror(x, w)];
        let half = params.patch_size as f64 / 2.0;
        let cell = params.patch_size as f64 / params.cells as f64;
        let overlap = |d: f64, c: usize| {
            let lo = -half + c as f64 * cell;
            (lo + cell).min(d + 0.5) - lo.max(d - 0.5)
        };
        let mut desc = vec![0.0f64; params.dims()];
        let reach = half as isize + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (px as isize + dx, py as isize + dy);
                let gx = 0.5 * (at(x + 1, y) - at(x - 1, y)) as f64;
                let gy = 0.5 * (at(x, y + 1) - at(x, y - 1)) as f64;
                let mag = gx.hypot(gy);
                if mag == 0.0 {
                    continue;
                }
                let pos = (gy.atan2(gx) / std::f64::consts::TAU * params.bins as f64).rem_euclid(params.bins as f64);
                let b0 = pos.floor() as usize % params.bins;
                let frac = pos - pos.floor();
                let s2 = 2.0 * (params.sigma as f64).powi(2);
                let g = (-((dx * dx + dy * dy) as f64) / s2).exp();
                for cy in 0..params.cells {
                    let oy = overlap(dy as f64, cy);
                    if oy <= 0.0 {
                        continue;
                    }
                    for cx in 0..params.cells {
                        let ox = overlap(dx as f64, cx);
                        if ox <= 0.0 {
                            continue;
                        }
                        let base = (cy * params.cells + cx) * params.bins;
                        let wgt = g * ox * oy * mag;
                        desc[base + b0] += wgt * (1.0 - frac);
                        desc[base + (b0 + 1) % params.bins] += wgt * frac;
                    }
                }
            }
        }
        let sum: f64 = desc.iter().sum();
        desc.iter()
            .map(|v| if sum > 0.0 { (v / sum).sqrt() as f32 } else { 0.0 })
            .collect()
    }

    #[test]
    fn mirror_indices() {
        assert_eq!(mirror(-1, 5), 1);
        assert_eq!(mirror(-2, 5), 2);
        assert_eq!(mirror(5, 5), 3);
        assert_eq!(mirror(6, 5), 2);
        assert_eq!(mirror(3, 5), 3);
    }

    #[test]
    fn matches_direct_histogram() {
        let img = noise_image(24, 20, 3);
        let params = DescriptorParams::default();
        let field = dense_descriptors(&img, &params).unwrap();
        for &(x, y) in &[(12, 10), (0, 0), (23, 19), (5, 17)] {
            let direct = direct_descriptor(&img, &params, x, y);
            for (a, b) in field.at_xy(x, y).iter().zip(&direct) {
                assert!((a - b).abs() < 1e-5, "({x},{y}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_image_gives_zero_descriptors() {
        let img = Image::from_fn(16, 16, |_, _| [0.4, 0.4, 0.4]);
        let field = dense_descriptors(&img, &DescriptorParams::default()).unwrap();
        assert!(field.data().iter().all(|&v| v == 0.0));
        assert!(classify_pixels(&field).labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = Image::from_fn(15, 30, |_, _| [0.0; 3]);
        assert!(dense_descriptors(&img, &DescriptorParams::default()).is_err());
    }

    #[test]
    fn quarter_turn_permutes_cells_and_bins() {
        let n = 33;
        let img = noise_image(n, n, 11);
        // rotated(x', y') = img(x, y) with x' = n-1-y, y' = x
        let rotated = Image::from_fn(n, n, |xr, yr| img.pixel(yr, n - 1 - xr));
        let params = DescriptorParams::default();
        let c = (n - 1) / 2;
        let orig = direct_descriptor(&img, &params, c, c);
        let field = dense_descriptors(&rotated, &params).unwrap();
        let rot = field.at_xy(c, c);
        let (cells, bins) = (params.cells, params.bins);
        for cy in 0..cells {
            for cx in 0..cells {
                for b in 0..bins {
                    let (rcx, rcy, rb) = (cells - 1 - cy, cx, (b + bins / 4) % bins);
                    let a = orig[(cy * cells + cx) * bins + b];
                    let r = rot[(rcy * cells + rcx) * bins + rb];
                    assert!((a - r).abs() < 1e-4, "cell ({cx},{cy}) bin {b}: {a} vs {r}");
                }
            }
        }
    }

    #[test]
    fn translation_equivariant_in_interior() {
        let big = noise_image(60, 50, 5);
        let (dx, dy) = (3usize, 2usize);
        let shifted = Image::from_fn(50, 40, |x, y| big.pixel(x + dx, y + dy));
        let base = Image::from_fn(56, 46, |x, y| big.pixel(x, y));
        let params = DescriptorParams::default();
        let fa = dense_descriptors(&base, &params).unwrap();
        let fb = dense_descriptors(&shifted, &params).unwrap();
        for y in 10..30 {
            for x in 10..35 {
                assert_eq!(fb.at_xy(x, y), fa.at_xy(x + dx, y + dy));
            }
        }
    }

    #[test]
    fn rootsift_norm_bound() {
        let field = dense_descriptors(&noise_image(20, 20, 9), &DescriptorParams::default()).unwrap();
        for d in field.data().chunks_exact(field.dims()) {
            let l2: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!(l2 <= 1.0 + 1e-6);
            assert!(d.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn classify_examples() {
        let f = DescriptorField::new(2, 1, 3, vec![0.1, 0.9, 0.3, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(classify_pixels(&f).labels(), &[1, 0]);
        let neg = DescriptorField::new(1, 1, 3, vec![-1.0, -0.5, -2.0]).unwrap();
        assert_eq!(classify_pixels(&neg).labels(), &[0]);
    }

    /// Pixels whose top two channels are separated by more than f32 rounding.
    fn decisive(field: &DescriptorField) -> Vec<bool> {
        field
            .data()
            .chunks_exact(field.dims())
            .map(|d| {
                let mut v: Vec<f32> = d.to_vec();
                v.sort_by(|a, b| b.total_cmp(a));
                v[0] - v[1] > 1e-4
            })
            .collect()
    }

    #[test]
    fn classify_invariant_under_increasing_maps() {
        let field = dense_descriptors(&noise_image(20, 18, 2), &DescriptorParams::default()).unwrap();
        let base = classify_pixels(&field);
        // Exact in f32, so every pixel must agree.
        assert_eq!(classify_pixels(&field.map_values(|v| 4.0 * v).unwrap()), base);

        // Strictly increasing in exact arithmetic; f32 rounding can only merge
        // near-ties, so compare where the winner is clear.
        let keep = decisive(&field);
        let mut soft = field.data().to_vec();
        for d in soft.chunks_exact_mut(field.dims()) {
            let z: f32 = d.iter().map(|v| v.exp()).sum();
            d.iter_mut().for_each(|v| *v = v.exp() / z);
        }
        let soft = DescriptorField::new(field.width(), field.height(), field.dims(), soft).unwrap();
        let sigmoid = |v: f32| 1.0 / (1.0 + (-v).exp());
        let mapped = [
            field.map_values(sigmoid).unwrap(),
            field.map_values(|v| v.exp()).unwrap(),
            field.map_values(|v| v * v * v + 2.0 * v).unwrap(),
            soft,
        ];
        for m in &mapped {
            let labels = classify_pixels(m);
            for (i, &k) in keep.iter().enumerate() {
                if k {
                    assert_eq!(labels.labels()[i], base.labels()[i]);
                }
            }
        }
        assert!(keep.iter().filter(|&&k| k).count() > keep.len() / 2);
    }

    #[test]
    fn color_stats_examples() {
        let img = Image::from_fn(2, 1, |x, _| [x as f32, 0.4, 0.6]);
        let one = color_stats(&Image::from_fn(1, 1, |_, _| [0.2, 0.4, 0.6]), &[0]).unwrap();
        assert!((one.mean[0] - 0.2).abs() < 1e-7 && one.std == [0.0; 3]);
        let two = color_stats(&img, &[0, 1]).unwrap();
        assert!((two.mean[0] - 0.5).abs() < 1e-12);
        assert!((two.std[0] - 0.5).abs() < 1e-12);
        assert!(color_stats(&img, &[]).is_err());
    }

    #[test]
    fn color_stats_matches_two_pass() {
        let img = noise_image(8, 8, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let region: Vec<usize> = (0..10).map(|_| rng.random_range(0..64)).collect();
        let stats = color_stats(&img, &region).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = region.iter().map(|&i| img.pixel_at(i)[c] as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((stats.mean[c] - mean).abs() < 1e-12);
            assert!((stats.std[c] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(descriptor_distance(&[1.0, 0.0], &[0.0, 1.0], Norm::L1).unwrap(), 2.0);
        let l2 = descriptor_distance(&[1.0, 0.0], &[0.0, 1.0], Norm::L2).unwrap();
        assert!((l2 - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(descriptor_distance(&[0.3; 4], &[0.3; 4], Norm::L2).unwrap(), 0.0);
        assert!(descriptor_distance(&[0.0; 2], &[0.0; 3], Norm::L1).is_err());
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(
            a in proptest::collection::vec(0f32..1.0, 8),
            b in proptest::collection::vec(0f32..1.0, 8),
            c in proptest::collection::vec(0f32..1.0, 8),
        ) {
            for norm in [Norm::L1, Norm::L2] {
                let ab = descriptor_distance(&a, &b, norm).unwrap();
                let ba = descriptor_distance(&b, &a, norm).unwrap();
                let bc = descriptor_distance(&b, &c, norm).unwrap();
                let ac = descriptor_distance(&a, &c, norm).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!(ac <= ab + bc + 1e-12);
                prop_assert_eq!(descriptor_distance(&a, &a, norm).unwrap(), 0.0);
            }
        }

        #[test]
        fn color_stats_permutation_invariant(idx in proptest::collection::vec(0usize..36, 1..20)) {
            let img = noise_image(6, 6, 8);
            let a = color_stats(&img, &idx).unwrap();
            let mut rev = idx.clone();
            rev.reverse();
            let b = color_stats(&img, &rev).unwrap();
            for c in 0..3 {
                prop_assert!((a.mean[c] - b.mean[c]).abs() < 1e-12);
                prop_assert!((a.std[c] - b.std[c]).abs() < 1e-12);
            }
        }
    }
}
