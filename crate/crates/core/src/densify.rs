//! Edge-preserving sparse-to-dense interpolation of flow seeds and
//! single-scale variational refinement.

use crate::descriptors::mirror;
use crate::error::{ensure, Error, Result};
use crate::imagery::{FlowField, Image};
use crate::sparse_match::{Seed, SeedSet};
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

/// Per-pixel boundary strength in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeCostMap {
    pub width: usize,
    pub height: usize,
    pub cost: Vec<f32>,
}

impl EdgeCostMap {
    /// Constant cost everywhere.
    pub fn uniform(width: usize, height: usize, value: f32) -> EdgeCostMap {
        EdgeCostMap {
            width,
            height,
            cost: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn max(&self) -> f32 {
        self.cost.iter().cloned().fold(0.0, f32::max)
    }
}

/// Separable Gaussian blur of one plane with mirrored borders.
fn gaussian_blur(plane: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    let mut tmp = vec![0.0f32; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let acc: f64 = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * plane[y * w + mirror(x as isize + k as isize - radius, w)] as f64)
                .sum();
            tmp[y * w + x] = acc as f32;
        }
    }
    let mut out = vec![0.0f32; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let acc: f64 = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[mirror(y as isize + k as isize - radius, h) * w + x] as f64)
                .sum();
            out[y * w + x] = acc as f32;
        }
    }
    out
}

/// Boundary strength: magnitude of the color gradient after a sigma = 1
/// Gaussian blur, divided by its 99th percentile (the maximum if that is
/// zero) and clamped to `[0, 1]`.
pub fn edge_cost(image: &Image) -> EdgeCostMap {
    let (w, h) = (image.width(), image.height());
    let mut mag2 = vec![0.0f32; w * h];
    for c in 0..3 {
        let blurred = gaussian_blur(&image.channel(c), w, h, 1.0);
        let (gx, gy) = crate::descriptors::gradients(&blurred, w, h);
        for ((m, a), b) in mag2.iter_mut().zip(&gx).zip(&gy) {
            *m += a * a + b * b;
        }
    }
    let mag: Vec<f32> = mag2.into_iter().map(f32::sqrt).collect();
    let mut sorted = mag.clone();
    let rank = ((sorted.len() - 1) as f64 * 0.99).round() as usize;
    let (_, p99, _) = sorted.select_nth_unstable_by(rank, f32::total_cmp);
    let mut scale = *p99;
    if scale <= 1e-12 {
        scale = mag.iter().cloned().fold(0.0, f32::max);
    }
    let cost = if scale <= 1e-12 {
        vec![0.0; w * h]
    } else {
        mag.iter().map(|m| (m / scale).clamp(0.0, 1.0)).collect()
    };
    EdgeCostMap {
        width: w,
        height: h,
        cost,
    }
}

/// Interpolation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationParams {
    /// Geodesic neighbours per pixel.
    pub k: usize,
    /// Base path cost per unit length.
    pub epsilon: f64,
    /// `sigma_g` as this fraction of the K-th neighbour distance.
    pub sigma_fraction: f64,
}

impl Default for InterpolationParams {
    fn default() -> Self {
        InterpolationParams {
            k: 25,
            epsilon: 0.01,
            sigma_fraction: 1.0 / 3.0,
        }
    }
}

/// A seed reduced to its position and flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowPoint {
    pub x: usize,
    pub y: usize,
    pub u: f64,
    pub v: f64,
}

impl From<&Seed> for FlowPoint {
    fn from(s: &Seed) -> Self {
        let (u, v) = s.matched.flow();
        FlowPoint {
            x: s.matched.x1,
            y: s.matched.y1,
            u,
            v,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, ties by index.
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Geodesic distance to the nearest seed and its index, per pixel.
#[derive(Clone, Debug)]
pub struct GeodesicLabels {
    pub distance: Vec<f64>,
    pub label: Vec<usize>,
}

const STEPS: [(isize, isize, f64); 8] = [
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, std::f64::consts::SQRT_2),
    (1, -1, std::f64::consts::SQRT_2),
    (-1, 1, std::f64::consts::SQRT_2),
    (-1, -1, std::f64::consts::SQRT_2),
];

fn step_cost(cost: &EdgeCostMap, p: usize, q: usize, len: f64, eps: f64) -> f64 {
    len * (eps + 0.5 * (cost.cost[p] as f64 + cost.cost[q] as f64))
}

/// Multi-source shortest paths on the 8-connected pixel grid; a step of
/// length `l` between pixels `p`, `q` costs `l * (eps + (c_p + c_q) / 2)`.
pub fn geodesic_labels(points: &[FlowPoint], cost: &EdgeCostMap, eps: f64) -> GeodesicLabels {
    let (w, h) = (cost.width, cost.height);
    let mut distance = vec![f64::INFINITY; w * h];
    let mut label = vec![usize::MAX; w * h];
    let mut heap = BinaryHeap::new();
    for (s, p) in points.iter().enumerate() {
        let i = p.y * w + p.x;
        if distance[i] > 0.0 {
            distance[i] = 0.0;
            label[i] = s;
            heap.push(Entry(0.0, i));
        }
    }
    while let Some(Entry(d, i)) = heap.pop() {
        if d > distance[i] {
            continue;
        }
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for &(dx, dy, len) in &STEPS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            let nd = d + step_cost(cost, i, j, len, eps);
            if nd < distance[j] {
                distance[j] = nd;
                label[j] = label[i];
                heap.push(Entry(nd, j));
            }
        }
    }
    GeodesicLabels { distance, label }
}

/// Seed adjacency induced by the geodesic label regions: the weight of
/// `(a, b)` is the shortest `d(p) + step(p, q) + d(q)` over neighbouring
/// pixels labelled `a` and `b`.
fn seed_graph(labels: &GeodesicLabels, cost: &EdgeCostMap, eps: f64, n: usize) -> Vec<Vec<(usize, f64)>> {
    let (w, h) = (cost.width, cost.height);
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            // Forward half of the neighbourhood visits each pair once.
            for &(dx, dy, len) in &[
                (1isize, 0isize, 1.0),
                (0, 1, 1.0),
                (1, 1, std::f64::consts::SQRT_2),
                (-1, 1, std::f64::consts::SQRT_2),
            ] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                let (a, b) = (labels.label[i], labels.label[j]);
                if a == b || a == usize::MAX || b == usize::MAX {
                    continue;
                }
                let d = labels.distance[i] + step_cost(cost, i, j, len, eps) + labels.distance[j];
                let key = (a.min(b), a.max(b));
                let e = best.entry(key).or_insert(f64::INFINITY);
                if d < *e {
                    *e = d;
                }
            }
        }
    }
    let mut adj = vec![Vec::new(); n];
    let mut pairs: Vec<_> = best.into_iter().collect();
    pairs.sort_by_key(|p| p.0);
    for ((a, b), d) in pairs {
        adj[a].push((b, d));
        adj[b].push((a, d));
    }
    adj
}

/// The `k` seeds nearest to `source` on the seed graph (including itself).
fn nearest_seeds(adj: &[Vec<(usize, f64)>], source: usize, k: usize) -> Vec<(usize, f64)> {
    let mut dist: HashMap<usize, f64> = HashMap::new();
    let mut done = Vec::with_capacity(k);
    let mut heap = BinaryHeap::new();
    dist.insert(source, 0.0);
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, s)) = heap.pop() {
        if d > dist[&s] || done.iter().any(|&(t, _)| t == s) {
            continue;
        }
        done.push((s, d));
        if done.len() == k {
            break;
        }
        for &(t, wt) in &adj[s] {
            let nd = d + wt;
            if dist.get(&t).is_none_or(|&old| nd < old) {
                dist.insert(t, nd);
                heap.push(Entry(nd, t));
            }
        }
    }
    done
}

fn collinear(points: &[FlowPoint]) -> bool {
    let Some(a) = points.first() else { return true };
    let Some(b) = points.iter().find(|p| (p.x, p.y) != (a.x, a.y)) else {
        return true;
    };
    points.iter().all(|c| {
        let cross = (b.x as f64 - a.x as f64) * (c.y as f64 - a.y as f64)
            - (b.y as f64 - a.y as f64) * (c.x as f64 - a.x as f64);
        cross == 0.0
    })
}

/// Weighted affine fit of `(u, v)` over neighbour seeds, evaluated at
/// `(px, py)`; falls back to the weighted mean when the fit is singular.
fn local_affine(points: &[FlowPoint], nbrs: &[(usize, f64)], px: f64, py: f64) -> (f64, f64) {
    // Normal equations in coordinates centred at the pixel: basis (1, dx, dy).
    let mut m = [[0.0f64; 3]; 3];
    let mut bu = [0.0f64; 3];
    let mut bv = [0.0f64; 3];
    let mut wsum = 0.0;
    let (mut mu, mut mv) = (0.0, 0.0);
    for &(s, w) in nbrs {
        let p = &points[s];
        let basis = [1.0, p.x as f64 - px, p.y as f64 - py];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += w * basis[r] * basis[c];
            }
            bu[r] += w * basis[r] * p.u;
            bv[r] += w * basis[r] * p.v;
        }
        wsum += w;
        mu += w * p.u;
        mv += w * p.v;
    }
    let mean = (mu / wsum, mv / wsum);
    let mat = nalgebra::Matrix3::from_fn(|r, c| m[r][c]);
    let eig = mat.symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(lo > 1e-9 * hi) {
        return mean;
    }
    let Some(inv) = mat.try_inverse() else {
        return mean;
    };
    let u = inv * nalgebra::Vector3::from(bu);
    let v = inv * nalgebra::Vector3::from(bv);
    (u[0], v[0])
}

/// Dense flow from sparse points: each pixel takes the `k` geodesically
/// nearest seeds, weights them by `exp(-d / sigma_g)` with `sigma_g` a fixed
/// fraction of the `k`-th distance, and evaluates a weighted affine fit at
/// its position. Fewer than three or collinear seeds give a nearest-seed
/// fill.
pub fn interpolate_points(points: &[FlowPoint], cost: &EdgeCostMap, params: &InterpolationParams) -> Result<FlowField> {
    ensure!(!points.is_empty(), "interpolation needs at least one seed");
    ensure!(
        params.k >= 1 && params.epsilon > 0.0,
        "invalid interpolation parameters"
    );
    let (w, h) = (cost.width, cost.height);
    ensure!(
        points
            .iter()
            .all(|p| p.x < w && p.y < h && p.u.is_finite() && p.v.is_finite()),
        "seed outside the image or non-finite"
    );
    let labels = geodesic_labels(points, cost, params.epsilon);
    if points.len() < 3 || collinear(points) {
        return Ok(FlowField::from_fn(w, h, |x, y| {
            let p = &points[labels.label[y * w + x]];
            (p.u as f32, p.v as f32)
        }));
    }
    let adj = seed_graph(&labels, cost, params.epsilon, points.len());
    let neighbourhoods: Vec<Vec<(usize, f64)>> = (0..points.len())
        .into_par_iter()
        .map(|s| nearest_seeds(&adj, s, params.k))
        .collect();
    let rows: Vec<Vec<(f32, f32)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut weighted = Vec::with_capacity(params.k);
            (0..w)
                .map(|x| {
                    let i = y * w + x;
                    let nbrs = &neighbourhoods[labels.label[i]];
                    let d0 = labels.distance[i];
                    let kth = d0 + nbrs.last().map_or(0.0, |n| n.1);
                    let sigma = params.sigma_fraction * kth;
                    weighted.clear();
                    weighted.extend(nbrs.iter().map(|&(s, d)| {
                        let wt = if sigma > 0.0 { (-(d0 + d) / sigma).exp() } else { 1.0 };
                        (s, wt)
                    }));
                    let (u, v) = local_affine(points, &weighted, x as f64, y as f64);
                    (u as f32, v as f32)
                })
                .collect()
        })
        .collect();
    let mut flow = FlowField::zeros(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (u, v)) in row.into_iter().enumerate() {
            flow.set(x, y, u, v);
        }
    }
    Ok(flow)
}

/// [`interpolate_points`] over a seed set.
pub fn interpolate(seeds: &SeedSet, cost: &EdgeCostMap, params: &InterpolationParams) -> Result<FlowField> {
    let points: Vec<FlowPoint> = seeds.seeds().iter().map(FlowPoint::from).collect();
    interpolate_points(&points, cost, params)
}

/// Union of per-cluster seed sets in the given (cluster) order; a pixel
/// claimed twice keeps the seed with the smaller descriptor distance.
pub fn assemble_seeds(sets: impl IntoIterator<Item = SeedSet>) -> SeedSet {
    SeedSet::from_candidates(sets.into_iter().flat_map(|s| s.seeds().to_vec()))
}

/// Variational refinement settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementParams {
    /// Warping (outer fixed-point) iterations.
    pub outer_iters: usize,
    /// Successive over-relaxation sweeps per warp.
    pub sor_iters: usize,
    /// Smoothness weight.
    pub alpha: f64,
    /// Gradient-constancy weight.
    pub gamma: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub omega: f64,
}

impl Default for RefinementParams {
    fn default() -> Self {
        RefinementParams {
            outer_iters: 5,
            sor_iters: 30,
            alpha: 10.0,
            gamma: 5.0,
            omega: 1.85,
        }
    }
}

impl RefinementParams {
    fn validate(&self) -> Result<()> {
        ensure!(
            self.outer_iters >= 1 && self.sor_iters >= 1 && self.alpha > 0.0 && self.gamma > 0.0,
            "refinement iteration counts and weights must be positive"
        );
        ensure!(
            self.omega > 0.0 && self.omega < 2.0,
            "relaxation factor must lie in (0, 2)"
        );
        Ok(())
    }
}

/// Intensities are compared on a 0..255 scale.
const INTENSITY_SCALE: f64 = 255.0;
const PSI_EPS2: f64 = 1e-6;

fn psi(s2: f64) -> f64 {
    (s2 + PSI_EPS2).sqrt()
}

fn psi_prime(s2: f64) -> f64 {
    0.5 / (s2 + PSI_EPS2).sqrt()
}

/// Per-channel planes of an image and its derivatives, row-major f64.
struct Planes {
    w: usize,
    h: usize,
    value: [Vec<f64>; 3],
    dx: [Vec<f64>; 3],
    dy: [Vec<f64>; 3],
    dxx: [Vec<f64>; 3],
    dxy: [Vec<f64>; 3],
    dyy: [Vec<f64>; 3],
}

fn derivatives(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; plane.len()];
    let mut gy = vec![0.0; plane.len()];
    for y in 0..h {
        let up = mirror(y as isize - 1, h) * w;
        let down = mirror(y as isize + 1, h) * w;
        for x in 0..w {
            let l = mirror(x as isize - 1, w);
            let r = mirror(x as isize + 1, w);
            gx[y * w + x] = 0.5 * (plane[y * w + r] - plane[y * w + l]);
            gy[y * w + x] = 0.5 * (plane[down + x] - plane[up + x]);
        }
    }
    (gx, gy)
}

impl Planes {
    fn new(image: &Image) -> Planes {
        let (w, h) = (image.width(), image.height());
        let value: [Vec<f64>; 3] =
            std::array::from_fn(|c| image.channel(c).iter().map(|&v| v as f64 * INTENSITY_SCALE).collect());
        let firsts: Vec<(Vec<f64>, Vec<f64>)> = value.iter().map(|p| derivatives(p, w, h)).collect();
        let dx: [Vec<f64>; 3] = std::array::from_fn(|c| firsts[c].0.clone());
        let dy: [Vec<f64>; 3] = std::array::from_fn(|c| firsts[c].1.clone());
        let sx: Vec<(Vec<f64>, Vec<f64>)> = dx.iter().map(|p| derivatives(p, w, h)).collect();
        let sy: Vec<(Vec<f64>, Vec<f64>)> = dy.iter().map(|p| derivatives(p, w, h)).collect();
        Planes {
            w,
            h,
            value,
            dxx: std::array::from_fn(|c| sx[c].0.clone()),
            dxy: std::array::from_fn(|c| sx[c].1.clone()),
            dyy: std::array::from_fn(|c| sy[c].1.clone()),
            dx,
            dy,
        }
    }

    /// Bilinear sample position, or `None` outside `[0, w-1] x [0, h-1]`.
    fn locate(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.w - 1) as f64 && y <= (self.h - 1) as f64) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let x0 = x0.min(self.w.saturating_sub(2));
        let y0 = y0.min(self.h.saturating_sub(2));
        Some((x0, y0, x - x0 as f64, y - y0 as f64))
    }

    fn sample(&self, plane: &[f64], at: (usize, usize, f64, f64)) -> f64 {
        let (x0, y0, fx, fy) = at;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let p = |x: usize, y: usize| plane[y * self.w + x];
        (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0)) + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1))
    }
}

/// Breakdown of the refinement energy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Energy {
    pub data: f64,
    pub gradient: f64,
    pub smoothness: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.data + self.gradient + self.smoothness
    }
}

fn smoothness_arg(u: &[f64], v: &[f64], w: usize, h: usize, i: usize) -> f64 {
    let (x, y) = (i % w, i / w);
    let (mut ux, mut uy, mut vx, mut vy) = (0.0, 0.0, 0.0, 0.0);
    if x + 1 < w {
        ux = u[i + 1] - u[i];
        vx = v[i + 1] - v[i];
    }
    if y + 1 < h {
        uy = u[i + w] - u[i];
        vy = v[i + w] - v[i];
    }
    ux * ux + uy * uy + vx * vx + vy * vy
}

fn energy_of(u: &[f64], v: &[f64], p1: &Planes, p2: &Planes, params: &RefinementParams) -> Energy {
    let (w, h) = (p1.w, p1.h);
    let mut e = Energy::default();
    for i in 0..w * h {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        if let Some(at) = p2.locate(x + u[i], y + v[i]) {
            let (mut d, mut g) = (0.0, 0.0);
            for c in 0..3 {
                let r = p2.sample(&p2.value[c], at) - p1.value[c][i];
                let rx = p2.sample(&p2.dx[c], at) - p1.dx[c][i];
                let ry = p2.sample(&p2.dy[c], at) - p1.dy[c][i];
                d += r * r;
                g += rx * rx + ry * ry;
            }
            e.data += psi(d);
            e.gradient += params.gamma * psi(g);
        }
        e.smoothness += params.alpha * psi(smoothness_arg(u, v, w, h, i));
    }
    e
}

/// Refinement energy of a flow field:
/// `sum Psi(|I2(x+w) - I1(x)|^2) + gamma Psi(|grad I2(x+w) - grad I1(x)|^2)`
/// over in-bounds warps plus `alpha sum Psi(|grad u|^2 + |grad v|^2)`, with
/// `Psi(s^2) = sqrt(s^2 + 1e-6)`, intensities on a 0..255 scale and forward
/// differences for the flow gradient.
pub fn energy(flow: &FlowField, i1: &Image, i2: &Image, params: &RefinementParams) -> Result<Energy> {
    check_inputs(flow, i1, i2)?;
    let u: Vec<f64> = flow.u().iter().map(|&a| a as f64).collect();
    let v: Vec<f64> = flow.v().iter().map(|&a| a as f64).collect();
    Ok(energy_of(&u, &v, &Planes::new(i1), &Planes::new(i2), params))
}

fn check_inputs(flow: &FlowField, i1: &Image, i2: &Image) -> Result<()> {
    ensure!(
        i1.width() == i2.width() && i1.height() == i2.height(),
        "images differ in size"
    );
    ensure!(
        flow.width() == i1.width() && flow.height() == i1.height(),
        "flow and image sizes differ"
    );
    ensure!(
        flow.u().iter().chain(flow.v()).all(|a| a.is_finite()),
        "flow contains non-finite values"
    );
    Ok(())
}

/// Result of refinement with its energy audit.
#[derive(Clone, Debug)]
pub struct Refinement {
    pub flow: FlowField,
    /// Energy before the first and after every warp.
    pub energies: Vec<f64>,
}

/// Single-scale variational refinement (see [`energy`]). Each warp
/// linearizes the data terms at the current flow, freezes the robust weights
/// and runs red-black SOR sweeps on the resulting 2x2-block linear system.
/// A warp whose result would raise the energy is shortened by halving; if no
/// shortened step lowers it, the flow is kept and refinement stops.
pub fn refine(flow: &FlowField, i1: &Image, i2: &Image, params: &RefinementParams) -> Result<Refinement> {
    check_inputs(flow, i1, i2)?;
    params.validate()?;
    let p1 = Planes::new(i1);
    let p2 = Planes::new(i2);
    let (w, h) = (p1.w, p1.h);
    let n = w * h;
    let mut u: Vec<f64> = flow.u().iter().map(|&a| a as f64).collect();
    let mut v: Vec<f64> = flow.v().iter().map(|&a| a as f64).collect();
    let mut current = energy_of(&u, &v, &p1, &p2, params).total();
    let mut energies = vec![current];
    // Per pixel: J11, J12, J22, j1, j2 of the frozen quadratic data model.
    let mut sys = vec![[0.0f64; 5]; n];
    let mut wx = vec![0.0f64; n];
    let mut wy = vec![0.0f64; n];
    for _ in 0..params.outer_iters {
        for i in 0..n {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let mut s = [0.0f64; 5];
            if let Some(at) = p2.locate(x + u[i], y + v[i]) {
                let mut r2 = 0.0;
                let mut g2 = 0.0;
                let mut bright = [[0.0f64; 3]; 3];
                let mut grad = [[0.0f64; 6]; 3];
                for c in 0..3 {
                    let iz = p2.sample(&p2.value[c], at) - p1.value[c][i];
                    let ix = p2.sample(&p2.dx[c], at);
                    let iy = p2.sample(&p2.dy[c], at);
                    let ixz = ix - p1.dx[c][i];
                    let iyz = iy - p1.dy[c][i];
                    let ixx = p2.sample(&p2.dxx[c], at);
                    let ixy = p2.sample(&p2.dxy[c], at);
                    let iyy = p2.sample(&p2.dyy[c], at);
                    r2 += iz * iz;
                    g2 += ixz * ixz + iyz * iyz;
                    bright[c] = [ix, iy, iz];
                    grad[c] = [ixx, ixy, iyy, ixz, iyz, 0.0];
                }
                let wd = psi_prime(r2);
                let wg = params.gamma * psi_prime(g2);
                for c in 0..3 {
                    let [ix, iy, iz] = bright[c];
                    s[0] += wd * ix * ix;
                    s[1] += wd * ix * iy;
                    s[2] += wd * iy * iy;
                    s[3] += wd * ix * iz;
                    s[4] += wd * iy * iz;
                    let [ixx, ixy, iyy, ixz, iyz, _] = grad[c];
                    s[0] += wg * (ixx * ixx + ixy * ixy);
                    s[1] += wg * (ixx * ixy + ixy * iyy);
                    s[2] += wg * (ixy * ixy + iyy * iyy);
                    s[3] += wg * (ixx * ixz + ixy * iyz);
                    s[4] += wg * (ixy * ixz + iyy * iyz);
                }
            }
            sys[i] = s;
            let ws = params.alpha * psi_prime(smoothness_arg(&u, &v, w, h, i));
            wx[i] = if (i % w) + 1 < w { ws } else { 0.0 };
            wy[i] = if (i / w) + 1 < h { ws } else { 0.0 };
        }
        let (u0, v0) = (u.clone(), v.clone());
        let (mut nu, mut nv) = (u.clone(), v.clone());
        for _ in 0..params.sor_iters {
            for color in 0..2 {
                for y in 0..h {
                    let start = (y + color) % 2;
                    for x in (start..w).step_by(2) {
                        let i = y * w + x;
                        let mut wsum = 0.0;
                        let (mut su, mut sv) = (0.0, 0.0);
                        let mut add = |j: usize, wt: f64| {
                            wsum += wt;
                            su += wt * nu[j];
                            sv += wt * nv[j];
                        };
                        if x + 1 < w {
                            add(i + 1, wx[i]);
                        }
                        if x > 0 {
                            add(i - 1, wx[i - 1]);
                        }
                        if y + 1 < h {
                            add(i + w, wy[i]);
                        }
                        if y > 0 {
                            add(i - w, wy[i - w]);
                        }
                        let [j11, j12, j22, j1, j2] = sys[i];
                        let a11 = j11 + wsum;
                        let a22 = j22 + wsum;
                        let b1 = j11 * u0[i] + j12 * v0[i] - j1 + su;
                        let b2 = j12 * u0[i] + j22 * v0[i] - j2 + sv;
                        let det = a11 * a22 - j12 * j12;
                        if !(det > 1e-12) {
                            continue;
                        }
                        let cu = (a22 * b1 - j12 * b2) / det;
                        let cv = (a11 * b2 - j12 * b1) / det;
                        nu[i] += params.omega * (cu - nu[i]);
                        nv[i] += params.omega * (cv - nv[i]);
                    }
                }
            }
        }
        // Backtrack toward the previous flow until the energy does not rise.
        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..12 {
            let tu: Vec<f64> = u0.iter().zip(&nu).map(|(a, b)| a + t * (b - a)).collect();
            let tv: Vec<f64> = v0.iter().zip(&nv).map(|(a, b)| a + t * (b - a)).collect();
            if tu.iter().chain(&tv).all(|a| a.is_finite()) {
                let e = energy_of(&tu, &tv, &p1, &p2, params).total();
                if e <= current {
                    u = tu;
                    v = tv;
                    current = e;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        energies.push(current);
        if !accepted {
            break;
        }
    }
    let out = FlowField::from_parts(
        w,
        h,
        u.iter().map(|&a| a as f32).collect(),
        v.iter().map(|&a| a as f32).collect(),
        vec![true; n],
    )
    .map_err(|e| Error::Internal(format!("refined flow invalid: {e}")))?;
    Ok(Refinement { flow: out, energies })
}
