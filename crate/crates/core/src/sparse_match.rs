//! Pixel-level descriptor matching inside matched regions, epipolar RANSAC
//! and superpixel-level affine outlier rejection. Produces sparse flow seeds.

use crate::descriptors::DescriptorField;
use crate::graph_build::MatchGraph;
use crate::graph_match::{fit_affine, unmatched_nodes, Correspondence};
use crate::superpixel::SuperpixelMap;
use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;

/// A pixel correspondence between the two frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PixelMatch {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
    /// L2 descriptor distance.
    pub distance: f64,
    /// Identifier of the region pair that produced the match.
    pub region: u64,
}

impl PixelMatch {
    pub fn flow(&self) -> (f64, f64) {
        (self.x2 as f64 - self.x1 as f64, self.y2 as f64 - self.y1 as f64)
    }
}

/// Where a seed came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedOrigin {
    Graph,
    SmallCluster,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Seed {
    pub matched: PixelMatch,
    pub origin: SeedOrigin,
}

/// Sparse flow seeds with at most one seed per frame-1 pixel and per frame-2
/// pixel.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SeedSet {
    seeds: Vec<Seed>,
}

impl SeedSet {
    /// Builds a set from candidate seeds. Conflicts on either frame's pixel
    /// are resolved in favour of the smaller descriptor distance (then the
    /// earlier candidate); survivors keep their input order.
    pub fn from_candidates(candidates: impl IntoIterator<Item = Seed>) -> SeedSet {
        let mut all: Vec<(usize, Seed)> = candidates.into_iter().enumerate().collect();
        all.sort_by(|a, b| {
            a.1.matched
                .distance
                .total_cmp(&b.1.matched.distance)
                .then(a.0.cmp(&b.0))
        });
        let mut first = HashMap::new();
        let mut second = HashMap::new();
        let mut kept = Vec::new();
        for (order, s) in all {
            let p1 = (s.matched.x1, s.matched.y1);
            let p2 = (s.matched.x2, s.matched.y2);
            if first.contains_key(&p1) || second.contains_key(&p2) {
                continue;
            }
            first.insert(p1, ());
            second.insert(p2, ());
            kept.push((order, s));
        }
        kept.sort_by_key(|k| k.0);
        SeedSet {
            seeds: kept.into_iter().map(|k| k.1).collect(),
        }
    }

    /// Union of two sets, with the same conflict rule.
    pub fn merge(self, other: SeedSet) -> SeedSet {
        SeedSet::from_candidates(self.seeds.into_iter().chain(other.seeds))
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn count(&self, origin: SeedOrigin) -> usize {
        self.seeds.iter().filter(|s| s.origin == origin).count()
    }
}

/// Tuning of pixel matching and outlier rejection.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseParams {
    /// Sampling stride of frame-1 candidates.
    pub stride: usize,
    /// Lowe ratio bound (best / second best distance).
    pub ratio: f64,
    pub ransac_iters: usize,
    /// Sampson distance bound in pixels.
    pub ransac_thresh_px: f64,
    /// Fixed affine-consistency tolerance; `None` derives it from the
    /// neighbour residuals.
    pub affine_tol: Option<f64>,
}

impl Default for SparseParams {
    fn default() -> Self {
        SparseParams {
            stride: 2,
            ratio: 0.9,
            ransac_iters: 2000,
            ransac_thresh_px: 1.0,
            affine_tol: None,
        }
    }
}

/// Rows of frame-1 candidates per distance block.
const BLOCK_ROWS: usize = 256;

/// Mutual-nearest-neighbour descriptor matching between two regions.
///
/// Frame-1 candidates are the region pixels on the global `stride` grid
/// (`x % stride == 0 && y % stride == 0`); frame-2 candidates are all region
/// pixels, so integer motions of any parity are representable. A match
/// `p -> q` is kept iff `q` is the nearest frame-2 candidate of `p`, `p` is
/// the nearest frame-1 candidate of `q`, and the best distance is strictly
/// below `ratio` times the second best on the frame-1 side.
pub fn match_pixels(
    region1: &[usize],
    region2: &[usize],
    field1: &DescriptorField,
    field2: &DescriptorField,
    stride: usize,
    ratio: f64,
    region: u64,
) -> Vec<PixelMatch> {
    let stride = stride.max(1);
    let w1 = field1.width();
    let w2 = field2.width();
    let cand1: Vec<usize> = region1
        .iter()
        .copied()
        .filter(|&p| (p % w1).is_multiple_of(stride) && (p / w1).is_multiple_of(stride))
        .collect();
    let cand2 = region2;
    if cand1.is_empty() || cand2.is_empty() {
        return Vec::new();
    }
    let d = field1.dims();
    let (n1, n2) = (cand1.len(), cand2.len());
    let gather = |field: &DescriptorField, idx: &[usize]| {
        let mut m = Vec::with_capacity(idx.len() * d);
        for &p in idx {
            m.extend_from_slice(field.at(p));
        }
        m
    };
    let a = gather(field1, &cand1);
    let b = gather(field2, cand2);
    let sq = |m: &[f32]| {
        m.chunks_exact(d)
            .map(|r| r.iter().map(|v| v * v).sum::<f32>())
            .collect::<Vec<_>>()
    };
    let (na, nb) = (sq(&a), sq(&b));

    // Per frame-1 row: best, second best (squared distances), best column.
    let mut row_best = vec![(f32::INFINITY, f32::INFINITY, 0usize); n1];
    // Per frame-2 column: best squared distance and best row.
    let mut col_best = vec![(f32::INFINITY, 0usize); n2];
    let mut block = vec![0.0f32; BLOCK_ROWS.min(n1) * n2];
    for start in (0..n1).step_by(BLOCK_ROWS) {
        let rows = BLOCK_ROWS.min(n1 - start);
        let out = &mut block[..rows * n2];
        // out = A_block * B^T
        unsafe {
            matrixmultiply::sgemm(
                rows,
                d,
                n2,
                1.0,
                a[start * d..].as_ptr(),
                d as isize,
                1,
                b.as_ptr(),
                1,
                d as isize,
                0.0,
                out.as_mut_ptr(),
                n2 as isize,
                1,
            );
        }
        for r in 0..rows {
            let i = start + r;
            let line = &out[r * n2..(r + 1) * n2];
            let mut best = (f32::INFINITY, f32::INFINITY, 0usize);
            for (j, &dot) in line.iter().enumerate() {
                let dist = (na[i] + nb[j] - 2.0 * dot).max(0.0);
                if dist < best.0 {
                    best = (dist, best.0, j);
                } else if dist < best.1 {
                    best.1 = dist;
                }
                if dist < col_best[j].0 {
                    col_best[j] = (dist, i);
                }
            }
            row_best[i] = best;
        }
    }
    let mut out = Vec::new();
    for (i, &(best, second, j)) in row_best.iter().enumerate() {
        if col_best[j].1 != i {
            continue;
        }
        // With a single frame-2 candidate the second best is infinite.
        if !((best.sqrt() as f64) < ratio * second.sqrt() as f64) {
            continue;
        }
        let (p, q) = (cand1[i], cand2[j]);
        let distance = field1
            .at(p)
            .iter()
            .zip(field2.at(q))
            .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        out.push(PixelMatch {
            x1: p % w1,
            y1: p / w1,
            x2: q % w2,
            y2: q / w2,
            distance,
            region,
        });
    }
    out
}

/// Result of epipolar RANSAC.
#[derive(Clone, Debug, PartialEq)]
pub struct RansacOutcome {
    /// Indices into the input match list, ascending.
    pub inliers: Vec<usize>,
    /// Best fundamental matrix (`x2^T F x1 = 0`), rank 2; `None` on
    /// pass-through.
    pub fundamental: Option<Matrix3<f64>>,
    /// Set when fewer than eight matches were given and all were passed
    /// through untested.
    pub passthrough: bool,
}

/// Stream seed for the RANSAC of one region.
pub fn region_stream(seed: u64, region: u64) -> u64 {
    seed ^ region.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

/// Robust fundamental-matrix consensus over pixel matches: normalized
/// 8-point hypotheses from seeded random samples, scored by the number of
/// matches with Sampson distance below `threshold` pixels.
pub fn ransac_fundamental(matches: &[PixelMatch], threshold: f64, iters: usize, seed: u64) -> RansacOutcome {
    let n = matches.len();
    if n < 8 {
        return RansacOutcome {
            inliers: (0..n).collect(),
            fundamental: None,
            passthrough: true,
        };
    }
    let p1: Vec<(f64, f64)> = matches.iter().map(|m| (m.x1 as f64, m.y1 as f64)).collect();
    let p2: Vec<(f64, f64)> = matches.iter().map(|m| (m.x2 as f64, m.y2 as f64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, Matrix3<f64>)> = None;
    for _ in 0..iters {
        let idx = sample(&mut rng, n, 8).into_vec();
        let s1: Vec<_> = idx.iter().map(|&i| p1[i]).collect();
        let s2: Vec<_> = idx.iter().map(|&i| p2[i]).collect();
        if degenerate_sample(&s1) || degenerate_sample(&s2) {
            continue;
        }
        let Some(f) = eight_point(&s1, &s2) else {
            continue;
        };
        let inliers: Vec<usize> = (0..n).filter(|&i| sampson(&f, p1[i], p2[i]) < threshold).collect();
        if best.as_ref().is_none_or(|b| inliers.len() > b.0.len()) {
            let all = inliers.len() == n;
            best = Some((inliers, f));
            if all {
                break;
            }
        }
    }
    match best {
        Some((inliers, f)) => RansacOutcome {
            inliers,
            fundamental: Some(f),
            passthrough: false,
        },
        None => RansacOutcome {
            inliers: Vec::new(),
            fundamental: None,
            passthrough: false,
        },
    }
}

/// Sampson distance of a correspondence to the epipolar geometry, in pixels.
pub fn sampson(f: &Matrix3<f64>, p1: (f64, f64), p2: (f64, f64)) -> f64 {
    let x1 = Vector3::new(p1.0, p1.1, 1.0);
    let x2 = Vector3::new(p2.0, p2.1, 1.0);
    let fx1 = f * x1;
    let ftx2 = f.transpose() * x2;
    let e = x2.dot(&fx1);
    let den = fx1[0] * fx1[0] + fx1[1] * fx1[1] + ftx2[0] * ftx2[0] + ftx2[1] * ftx2[1];
    if den <= 0.0 {
        return if e == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (e * e / den).sqrt()
}

/// Repeated points or all points on one line.
fn degenerate_sample(pts: &[(f64, f64)]) -> bool {
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if pts[i] == pts[j] {
                return true;
            }
        }
    }
    let (a, b) = (pts[0], pts[1]);
    pts[2..]
        .iter()
        .all(|c| robust::orient2d(coord(a), coord(b), coord(*c)) == 0.0)
}

fn coord(p: (f64, f64)) -> robust::Coord<f64> {
    robust::Coord { x: p.0, y: p.1 }
}

/// Similarity normalization: centroid to the origin, mean distance sqrt(2).
fn normalization(pts: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let (cx, cy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let mean = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    if mean <= 0.0 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Normalized 8-point estimate of `F` with rank 2 enforced.
pub fn eight_point(p1: &[(f64, f64)], p2: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    assert_eq!(p1.len(), p2.len());
    if p1.len() < 8 {
        return None;
    }
    let t1 = normalization(p1)?;
    let t2 = normalization(p2)?;
    // Accumulate A^T A so any number of correspondences fits a 9x9 system.
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (&a, &b) in p1.iter().zip(p2) {
        let x = t1 * Vector3::new(a.0, a.1, 1.0);
        let y = t2 * Vector3::new(b.0, b.1, 1.0);
        let row = SMatrix::<f64, 9, 1>::from_column_slice(&[
            y[0] * x[0],
            y[0] * x[1],
            y[0],
            y[1] * x[0],
            y[1] * x[1],
            y[1],
            x[0],
            x[1],
            1.0,
        ]);
        ata += row * row.transpose();
    }
    let eig = ata.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let f = eig.eigenvectors.column(k);
    let fhat = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let mut svd = fhat.svd(true, true);
    let smallest = svd.singular_values.imin();
    svd.singular_values[smallest] = 0.0;
    let f2 = svd.recompose().ok()?;
    let f = t2.transpose() * f2 * t1;
    let norm = f.norm();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    Some(f / norm)
}

/// Verdict of the local affine test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Consistency {
    Keep,
    Reject,
}

/// Tests a superpixel's centroid correspondence `own = (c1, c2)` against an
/// affine map fitted to its matched neighbours' correspondences. Fewer than
/// three neighbours or a degenerate fit keep the superpixel. The default
/// tolerance is twice the median neighbour residual plus 3 px.
pub fn affine_consistency(
    own: ((f64, f64), (f64, f64)),
    neighbors: &[((f64, f64), (f64, f64))],
    tol: Option<f64>,
) -> Consistency {
    if neighbors.len() < 3 {
        return Consistency::Keep;
    }
    let pairs: Vec<_> = neighbors.iter().map(|&(p, q)| (p, q, 1.0)).collect();
    let Ok(t) = fit_affine(&pairs) else {
        return Consistency::Keep;
    };
    let residual = |(p, q): ((f64, f64), (f64, f64))| {
        let r = t.apply(p);
        (r.0 - q.0).hypot(r.1 - q.1)
    };
    let tol = tol.unwrap_or_else(|| {
        let mut res: Vec<f64> = neighbors.iter().map(|&c| residual(c)).collect();
        res.sort_by(f64::total_cmp);
        let m = res.len();
        let median = if m % 2 == 1 {
            res[m / 2]
        } else {
            0.5 * (res[m / 2 - 1] + res[m / 2])
        };
        2.0 * median + 3.0
    });
    if residual(own) > tol {
        Consistency::Reject
    } else {
        Consistency::Keep
    }
}

/// Inputs describing one matched pair of graphs.
pub struct GraphPair<'a> {
    pub g1: &'a MatchGraph,
    pub g2: &'a MatchGraph,
    pub spm1: &'a SuperpixelMap,
    pub spm2: &'a SuperpixelMap,
    pub field1: &'a DescriptorField,
    pub field2: &'a DescriptorField,
}

/// Summary of superpixel-level filtering.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SuperpixelSeeding {
    pub matched: usize,
    pub unmatched: usize,
    pub affine_rejected: usize,
    pub ransac_passthrough: usize,
}

/// Seeds from a graph correspondence: unmatched and affine-inconsistent
/// superpixels are dropped; each surviving pair is matched pixel-wise and
/// filtered by its own epipolar RANSAC. `region_base` keeps region ids (and
/// so RANSAC streams) distinct across cluster pairs.
pub fn seeds_from_superpixel_matches(
    corr: &Correspondence,
    pair: &GraphPair<'_>,
    params: &SparseParams,
    tau: Option<f64>,
    seed: u64,
    region_base: u64,
) -> (SeedSet, SuperpixelSeeding) {
    let un = unmatched_nodes(corr, tau);
    let mut active: Vec<Option<usize>> = corr.discrete.clone();
    for &i in &un.first {
        active[i] = None;
    }
    let mut report = SuperpixelSeeding {
        unmatched: un.first.len(),
        ..Default::default()
    };
    let adjacency = pair.g1.adjacency();
    let centroid_pair = |i: usize, k: usize| (pair.g1.nodes[i].centroid, pair.g2.nodes[k].centroid);
    let mut survivors = Vec::new();
    for (i, k) in active.iter().enumerate() {
        let Some(k) = *k else { continue };
        let neighbors: Vec<_> = adjacency[i]
            .iter()
            .filter_map(|&j| active[j].map(|l| centroid_pair(j, l)))
            .collect();
        match affine_consistency(centroid_pair(i, k), &neighbors, params.affine_tol) {
            Consistency::Keep => survivors.push((i, k)),
            Consistency::Reject => report.affine_rejected += 1,
        }
    }
    report.matched = survivors.len();
    let mut candidates = Vec::new();
    for (i, k) in survivors {
        let s1 = &pair.spm1.superpixels[pair.g1.nodes[i].superpixel];
        let s2 = &pair.spm2.superpixels[pair.g2.nodes[k].superpixel];
        let region = region_base + i as u64;
        let matches = match_pixels(
            &s1.pixels,
            &s2.pixels,
            pair.field1,
            pair.field2,
            params.stride,
            params.ratio,
            region,
        );
        let outcome = ransac_fundamental(
            &matches,
            params.ransac_thresh_px,
            params.ransac_iters,
            region_stream(seed, region),
        );
        if outcome.passthrough {
            report.ransac_passthrough += 1;
        }
        candidates.extend(outcome.inliers.iter().map(|&m| Seed {
            matched: matches[m],
            origin: SeedOrigin::Graph,
        }));
    }
    (SeedSet::from_candidates(candidates), report)
}

/// Seeds for a small-cluster pair: direct pixel matching over the whole
/// clusters followed by epipolar RANSAC.
pub fn seeds_from_regions(
    region1: &[usize],
    region2: &[usize],
    field1: &DescriptorField,
    field2: &DescriptorField,
    params: &SparseParams,
    seed: u64,
    region: u64,
) -> (SeedSet, bool) {
    let matches = match_pixels(region1, region2, field1, field2, params.stride, params.ratio, region);
    let outcome = ransac_fundamental(
        &matches,
        params.ransac_thresh_px,
        params.ransac_iters,
        region_stream(seed, region),
    );
    let seeds = SeedSet::from_candidates(outcome.inliers.iter().map(|&m| Seed {
        matched: matches[m],
        origin: SeedOrigin::SmallCluster,
    }));
    (seeds, outcome.passthrough)
}
