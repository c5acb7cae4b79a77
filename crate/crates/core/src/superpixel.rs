//! SLIC superpixels restricted to a cluster mask.
//!
//! The mask is split into 4-connected components; each component receives a
//! share of the superpixel budget proportional to its area and is segmented
//! independently, so every superpixel stays inside one component.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::imagery::Image;

/// Default superpixel size in pixels.
pub const DEFAULT_SUPERPIXEL_SIZE: usize = 2223;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    /// Weight of the spatial term relative to CIELAB color distance.
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            compactness: 10.0,
            iterations: 10,
        }
    }
}

/// A connected group of pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Superpixel {
    pub id: usize,
    /// Pixel indices `y * width + x`, ascending.
    pub pixels: Vec<usize>,
    /// Mean pixel position `(x, y)`.
    pub centroid: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelMap {
    pub parent: u16,
    pub width: usize,
    pub height: usize,
    pub superpixels: Vec<Superpixel>,
    /// Superpixel id per image pixel; `None` outside the superpixels.
    pub raster: Vec<Option<u32>>,
    /// Mask pixels left unsegmented: connected fragments smaller than half
    /// the mean superpixel area. Ascending.
    pub residual: Vec<usize>,
}

impl SuperpixelMap {
    pub fn len(&self) -> usize {
        self.superpixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.superpixels.is_empty()
    }
}

/// Number of superpixels for a region: `round(area / s_size)`, at least 1.
pub fn target_count(cluster_area: usize, s_size: usize) -> usize {
    let s = s_size.max(1);
    ((cluster_area as f64 / s as f64).round() as usize).max(1)
}

/// sRGB in `[0,1]` to CIELAB (D65).
pub fn rgb_to_lab(rgb: [f32; 3]) -> [f64; 3] {
    let lin = |c: f32| {
        let c = c.clamp(0.0, 1.0) as f64;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = (0.019_333_9 * r + 0.119_192 * g + 0.950_304_1 * b) / 1.088_83;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIELAB conversion of a whole image.
pub fn lab_image(image: &Image) -> Vec<[f64; 3]> {
    (0..image.len()).map(|i| rgb_to_lab(image.pixel_at(i))).collect()
}

/// 4-connected components of a pixel set, each sorted, ordered by first pixel.
pub fn connected_components(pixels: &[usize], width: usize, height: usize) -> Vec<Vec<usize>> {
    let mut in_set = vec![false; width * height];
    for &p in pixels {
        in_set[p] = true;
    }
    let mut seen = vec![false; width * height];
    let mut sorted = pixels.to_vec();
    sorted.sort_unstable();
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for &start in &sorted {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (x, y) = (p % width, p / width);
            let mut visit = |q: usize| {
                if in_set[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Splits `kappa` across components in proportion to area. A component
/// smaller than half the mean superpixel area gets none.
fn apportion(areas: &[usize], kappa: usize) -> Vec<usize> {
    let total: usize = areas.iter().sum();
    areas
        .iter()
        .map(|&a| ((kappa as f64 * a as f64 / total as f64).round() as usize).min(a))
        .collect()
}

/// Segments the masked pixels into about `kappa` connected superpixels.
///
/// Each connected component of the mask is segmented on its own with a
/// share of `kappa` proportional to its area. Fragments too small for even
/// one superpixel are not segmented; they are listed in
/// [`SuperpixelMap::residual`], so superpixels and residual together
/// partition the mask. A mask with no large enough component yields an
/// empty map.
///
/// `mask` holds pixel indices `y * width + x`; `lab` is the CIELAB image.
pub fn slic(
    image: &Image,
    lab: &[[f64; 3]],
    mask: &[usize],
    kappa: usize,
    params: &SlicParams,
    parent: u16,
) -> Result<SuperpixelMap> {
    let (w, h) = (image.width(), image.height());
    ensure!(kappa >= 1, "kappa must be positive");
    ensure!(
        mask.len() >= kappa,
        "mask of {} pixels cannot hold {kappa} superpixels",
        mask.len()
    );
    ensure!(lab.len() == w * h, "lab buffer does not match image");
    ensure!(mask.iter().all(|&p| p < w * h), "mask pixel outside image");

    let comps = connected_components(mask, w, h);
    let budget = apportion(&comps.iter().map(Vec::len).collect::<Vec<_>>(), kappa);
    let mut raster = vec![None; w * h];
    let mut superpixels = Vec::new();
    let mut residual = Vec::new();
    for (comp, k) in comps.iter().zip(budget) {
        if k == 0 {
            residual.extend_from_slice(comp);
            continue;
        }
        let groups = if k == 1 {
            vec![comp.clone()]
        } else {
            segment_component(lab, w, comp, k, params)
        };
        for pixels in groups {
            let id = superpixels.len();
            let n = pixels.len() as f64;
            let (sx, sy) = pixels
                .iter()
                .fold((0.0, 0.0), |(sx, sy), &p| (sx + (p % w) as f64, sy + (p / w) as f64));
            for &p in &pixels {
                raster[p] = Some(id as u32);
            }
            superpixels.push(Superpixel {
                id,
                pixels,
                centroid: (sx / n, sy / n),
            });
        }
    }
    Ok(SuperpixelMap {
        parent,
        width: w,
        height: h,
        superpixels,
        raster,
        residual: {
            residual.sort_unstable();
            residual
        },
    })
}

/// Grid dimensions whose product is closest to `target` with cell aspect near 1.
fn grid_shape(bw: f64, bh: f64, target: f64) -> (usize, usize) {
    let mut best = (1, 1);
    let mut best_score = f64::INFINITY;
    let max_nx = (target.ceil() as usize).max(1);
    for nx in 1..=max_nx {
        let ny = ((target / nx as f64).round() as usize).max(1);
        let count_err = (nx * ny) as f64 / target - 1.0;
        let aspect = ((bw / nx as f64) / (bh / ny as f64)).ln();
        let score = count_err.abs() + 0.1 * aspect.abs();
        if score < best_score {
            best_score = score;
            best = (nx, ny);
        }
    }
    best
}

struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// SLIC on one connected component (global pixel indices, sorted).
fn segment_component(lab: &[[f64; 3]], width: usize, comp: &[usize], k: usize, params: &SlicParams) -> Vec<Vec<usize>> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for &p in comp {
        let (x, y) = (p % width, p / width);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let local = |p: usize| (p / width - y0) * bw + (p % width - x0);
    let mut inside = vec![false; bw * bh];
    for &p in comp {
        inside[local(p)] = true;
    }
    let lab_at = |lx: usize, ly: usize| lab[(ly + y0) * width + lx + x0];

    let step = (comp.len() as f64 / k as f64).sqrt();
    let bbox_target = k as f64 * (bw * bh) as f64 / comp.len() as f64;
    let (nx, ny) = grid_shape(bw as f64, bh as f64, bbox_target);
    let (cw, ch) = (bw as f64 / nx as f64, bh as f64 / ny as f64);

    let grad = |lx: usize, ly: usize| -> f64 {
        if lx == 0 || ly == 0 || lx + 1 >= bw || ly + 1 >= bh {
            return f64::INFINITY;
        }
        let d = |a: [f64; 3], b: [f64; 3]| -> f64 { (0..3).map(|c| (a[c] - b[c]).powi(2)).sum() };
        d(lab_at(lx + 1, ly), lab_at(lx - 1, ly)) + d(lab_at(lx, ly + 1), lab_at(lx, ly - 1))
    };

    let mut centers: Vec<Center> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let sx = (((i as f64 + 0.5) * cw) as usize).min(bw - 1);
            let sy = (((j as f64 + 0.5) * ch) as usize).min(bh - 1);
            if !inside[sy * bw + sx] {
                continue;
            }
            let (mut bx, mut by, mut bg) = (sx, sy, grad(sx, sy));
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (qx, qy) = (sx as isize + dx, sy as isize + dy);
                    if qx < 0 || qy < 0 || qx >= bw as isize || qy >= bh as isize {
                        continue;
                    }
                    let (qx, qy) = (qx as usize, qy as usize);
                    if inside[qy * bw + qx] {
                        let g = grad(qx, qy);
                        if g < bg {
                            (bx, by, bg) = (qx, qy, g);
                        }
                    }
                }
            }
            centers.push(Center {
                lab: lab_at(bx, by),
                x: bx as f64,
                y: by as f64,
            });
        }
    }
    if centers.is_empty() {
        // Thin shapes can miss every grid point; seed at the pixel nearest the centroid.
        let n = comp.len() as f64;
        let (mx, my) = comp.iter().fold((0.0, 0.0), |(a, b), &p| {
            (a + (p % width - x0) as f64 / n, b + (p / width - y0) as f64 / n)
        });
        let &p = comp
            .iter()
            .min_by(|&&a, &&b| {
                let da = ((a % width - x0) as f64 - mx).powi(2) + ((a / width - y0) as f64 - my).powi(2);
                let db = ((b % width - x0) as f64 - mx).powi(2) + ((b / width - y0) as f64 - my).powi(2);
                da.total_cmp(&db)
            })
            .unwrap();
        centers.push(Center {
            lab: lab[p],
            x: (p % width - x0) as f64,
            y: (p / width - y0) as f64,
        });
    }

    let spatial = (params.compactness / step).powi(2);
    let mut labels = vec![u32::MAX; bw * bh];
    let mut dist = vec![f64::INFINITY; bw * bh];
    let radius = (2.0 * step).ceil() as isize;
    for _ in 0..params.iterations.max(1) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x.round() as isize, c.y.round() as isize);
            let ylo = (cy - radius).max(0) as usize;
            let yhi = ((cy + radius) as usize).min(bh - 1);
            let xlo = (cx - radius).max(0) as usize;
            let xhi = ((cx + radius) as usize).min(bw - 1);
            for ly in ylo..=yhi {
                for lx in xlo..=xhi {
                    let li = ly * bw + lx;
                    if !inside[li] {
                        continue;
                    }
                    let l = lab_at(lx, ly);
                    let dc = (0..3).map(|q| (l[q] - c.lab[q]).powi(2)).sum::<f64>();
                    let ds = (lx as f64 - c.x).powi(2) + (ly as f64 - c.y).powi(2);
                    let d = dc + ds * spatial;
                    if d < dist[li] {
                        dist[li] = d;
                        labels[li] = ci as u32;
                    }
                }
            }
        }
        let mut acc = vec![([0.0f64; 3], 0.0f64, 0.0f64, 0usize); centers.len()];
        for ly in 0..bh {
            for lx in 0..bw {
                let li = ly * bw + lx;
                if labels[li] == u32::MAX {
                    continue;
                }
                let a = &mut acc[labels[li] as usize];
                let l = lab_at(lx, ly);
                for q in 0..3 {
                    a.0[q] += l[q];
                }
                a.1 += lx as f64;
                a.2 += ly as f64;
                a.3 += 1;
            }
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a.3 > 0 {
                let n = a.3 as f64;
                c.lab = a.0.map(|v| v / n);
                c.x = a.1 / n;
                c.y = a.2 / n;
            }
        }
    }

    enforce_connectivity(&inside, &mut labels, bw, bh)
        .into_iter()
        .map(|seg| {
            let mut px: Vec<usize> = seg
                .into_iter()
                .map(|li| (li / bw + y0) * width + li % bw + x0)
                .collect();
            px.sort_unstable();
            px
        })
        .collect()
}

/// Keeps the largest 4-connected piece of each label and merges every other
/// piece (including unassigned pixels) into its largest adjacent segment.
/// Returns the final segments as local pixel lists, ordered by first pixel.
fn enforce_connectivity(inside: &[bool], labels: &mut [u32], bw: usize, bh: usize) -> Vec<Vec<usize>> {
    // Label pieces.
    let mut piece = vec![usize::MAX; bw * bh];
    let mut pieces: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..bw * bh {
        if !inside[start] || piece[start] != usize::MAX {
            continue;
        }
        let id = pieces.len();
        let lab = labels[start];
        piece[start] = id;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(p) = queue.pop_front() {
            members.push(p);
            for q in neighbors4(p, bw, bh) {
                if inside[q] && piece[q] == usize::MAX && labels[q] == lab {
                    piece[q] = id;
                    queue.push_back(q);
                }
            }
        }
        pieces.push(members);
    }

    // The largest piece of each assigned label is kept.
    let mut keep = vec![false; pieces.len()];
    let mut best: std::collections::BTreeMap<u32, usize> = std::collections::BTreeMap::new();
    for (id, members) in pieces.iter().enumerate() {
        let lab = labels[members[0]];
        if lab == u32::MAX {
            continue;
        }
        match best.get(&lab) {
            Some(&b) if pieces[b].len() >= members.len() => {}
            _ => {
                best.insert(lab, id);
            }
        }
    }
    for &id in best.values() {
        keep[id] = true;
    }

    // Union-find style merge: each orphan points at the segment it joins.
    let mut owner: Vec<usize> = (0..pieces.len()).collect();
    let mut size: Vec<usize> = pieces.iter().map(Vec::len).collect();
    fn root(owner: &mut [usize], mut i: usize) -> usize {
        while owner[i] != i {
            owner[i] = owner[owner[i]];
            i = owner[i];
        }
        i
    }
    loop {
        let mut changed = false;
        let mut pending = false;
        for id in 0..pieces.len() {
            if keep[id] || owner[id] != id {
                continue;
            }
            let mut target: Option<(usize, usize)> = None;
            for &p in &pieces[id] {
                for q in neighbors4(p, bw, bh) {
                    if !inside[q] {
                        continue;
                    }
                    let r = root(&mut owner, piece[q]);
                    if r == id || !keep[r] {
                        continue;
                    }
                    let cand = (size[r], usize::MAX - r);
                    if target.is_none_or(|t| cand > (size[t.0], usize::MAX - t.0)) {
                        target = Some((r, 0));
                    }
                }
            }
            match target {
                Some((r, _)) => {
                    owner[id] = r;
                    size[r] += size[id];
                    changed = true;
                }
                None => pending = true,
            }
        }
        if !pending {
            break;
        }
        if !changed {
            // Orphans touching only other orphans: promote the largest one.
            let id = (0..pieces.len())
                .filter(|&i| !keep[i] && owner[i] == i)
                .max_by_key(|&i| (size[i], usize::MAX - i))
                .unwrap();
            keep[id] = true;
        }
    }

    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for id in 0..pieces.len() {
        let r = root(&mut owner, id);
        groups.entry(r).or_default().extend_from_slice(&pieces[id]);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    for g in &mut out {
        g.sort_unstable();
    }
    out.sort_by_key(|g| g[0]);
    for (k, g) in out.iter().enumerate() {
        for &p in g {
            labels[p] = k as u32;
        }
    }
    out
}

fn neighbors4(p: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % w, p / w);
    [
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y > 0).then(|| p - w),
        (y + 1 < h).then(|| p + w),
    ]
    .into_iter()
    .flatten()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn is_connected(pixels: &[usize], w: usize, h: usize) -> bool {
        connected_components(pixels, w, h).len() == 1
    }

    fn check_partition(map: &SuperpixelMap, mask: &[usize]) {
        let mut seen = vec![false; map.width * map.height];
        let mut total = 0;
        for sp in &map.superpixels {
            assert!(!sp.pixels.is_empty());
            assert!(
                is_connected(&sp.pixels, map.width, map.height),
                "superpixel {} disconnected",
                sp.id
            );
            for &p in &sp.pixels {
                assert!(!seen[p], "pixel {p} assigned twice");
                seen[p] = true;
                assert_eq!(map.raster[p], Some(sp.id as u32));
            }
            total += sp.pixels.len();
        }
        for &p in &map.residual {
            assert!(!seen[p], "residual pixel {p} also in a superpixel");
            assert_eq!(map.raster[p], None);
            seen[p] = true;
        }
        total += map.residual.len();
        assert_eq!(total, mask.len());
        assert!(mask.iter().all(|&p| seen[p]));
    }

    #[test]
    fn target_count_examples() {
        assert_eq!(target_count(1024 * 436, 2223), 201);
        assert_eq!(target_count(2223, 2223), 1);
        assert_eq!(target_count(2 * 2223, 2223), 2);
        assert_eq!(target_count(10, 2223), 1);
    }

    #[test]
    fn uniform_rectangle_gives_regular_grid() {
        let img = Image::from_fn(60, 40, |_, _| [0.5, 0.3, 0.2]);
        let lab = lab_image(&img);
        let mask: Vec<usize> = (0..img.len()).collect();
        let kappa = 24;
        let map = slic(&img, &lab, &mask, kappa, &SlicParams::default(), 0).unwrap();
        check_partition(&map, &mask);
        let n = map.len() as f64;
        assert!((n - kappa as f64).abs() <= 0.2 * kappa as f64, "{n} superpixels");
        let mean = mask.len() as f64 / kappa as f64;
        for sp in &map.superpixels {
            let a = sp.pixels.len() as f64;
            assert!(a >= 0.5 * mean && a <= 2.0 * mean, "area {a} vs mean {mean}");
        }
    }

    #[test]
    fn kappa_one_is_whole_mask() {
        let img = Image::from_fn(20, 20, |x, y| [x as f32 / 20.0, y as f32 / 20.0, 0.1]);
        let lab = lab_image(&img);
        let mask: Vec<usize> = (0..400).filter(|p| p % 20 > 3).collect();
        let map = slic(&img, &lab, &mask, 1, &SlicParams::default(), 5).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map.superpixels[0].pixels, mask);
        assert_eq!(map.parent, 5);
    }

    #[test]
    fn noisy_irregular_mask_is_partitioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Image::from_fn(80, 64, |_, _| [rng.random(), rng.random(), rng.random()]);
        let lab = lab_image(&img);
        // Two blobs plus scattered specks.
        let mask: Vec<usize> = (0..img.len())
            .filter(|&p| {
                let (x, y) = ((p % 80) as f64, (p / 80) as f64);
                let blob = (x - 25.0).hypot(y - 30.0) < 20.0 || (x - 65.0).hypot(y - 20.0) < 12.0;
                blob || (p * 7919) % 97 == 0
            })
            .collect();
        let map = slic(&img, &lab, &mask, 12, &SlicParams::default(), 0).unwrap();
        check_partition(&map, &mask);
        let again = slic(&img, &lab, &mask, 12, &SlicParams::default(), 0).unwrap();
        assert_eq!(map, again);
    }

    #[test]
    fn fragments_below_half_a_superpixel_stay_residual() {
        let img = Image::from_fn(40, 40, |x, y| [x as f32 / 40.0, y as f32 / 40.0, 0.3]);
        let lab = lab_image(&img);
        // A 20x20 block plus isolated single pixels on a lattice.
        let mask: Vec<usize> = (0..1600)
            .filter(|&p| {
                let (x, y) = (p % 40, p / 40);
                (x < 20 && y < 20) || (x > 21 && y > 21 && x % 3 == 0 && y % 3 == 0)
            })
            .collect();
        let map = slic(&img, &lab, &mask, 4, &SlicParams::default(), 0).unwrap();
        check_partition(&map, &mask);
        assert_eq!(map.residual.len(), mask.len() - 400);
        assert!((3..=5).contains(&map.len()), "{} superpixels", map.len());
    }

    #[test]
    fn mask_smaller_than_kappa_is_rejected() {
        let img = Image::from_fn(4, 4, |_, _| [0.0; 3]);
        let lab = lab_image(&img);
        assert!(slic(&img, &lab, &[0, 1, 2], 4, &SlicParams::default(), 0).is_err());
    }

    #[test]
    fn lab_reference_values() {
        let white = rgb_to_lab([1.0, 1.0, 1.0]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-3 && white[2].abs() < 1e-3);
        let black = rgb_to_lab([0.0, 0.0, 0.0]);
        assert!(black[0].abs() < 1e-9);
        // sRGB red, D65: (53.24, 80.09, 67.20)
        let red = rgb_to_lab([1.0, 0.0, 0.0]);
        assert!((red[0] - 53.24).abs() < 0.05 && (red[1] - 80.09).abs() < 0.1 && (red[2] - 67.20).abs() < 0.1);
    }
}
