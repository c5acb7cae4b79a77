//! Matching graphs over superpixel centroids.
//!
//! Nodes carry the centroid, the mean descriptor, and color statistics of
//! their superpixel. Edges come from a Delaunay triangulation of the
//! centroids and carry their undirected angle to the x axis and their length.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use robust::{incircle, orient2d, Coord};

use crate::descriptors::{color_stats, ColorStats, DescriptorField};
use crate::error::{ensure, Error, Result};
use crate::imagery::Image;
use crate::superpixel::SuperpixelMap;

#[inline]
fn coord(p: (f64, f64)) -> Coord<f64> {
    Coord { x: p.0, y: p.1 }
}

/// Edges of the Delaunay triangulation of `points`, as sorted `(i, j)` pairs
/// with `i < j`.
///
/// Degenerate inputs: two points give one edge, collinear points give the
/// path along the line, and exact duplicates of an earlier point get no
/// edges. Cocircular configurations resolve by lexicographic insertion order.
pub fn delaunay(points: &[(f64, f64)]) -> Result<Vec<(usize, usize)>> {
    ensure!(
        points.len() >= 2,
        "triangulation needs at least 2 points, got {}",
        points.len()
    );
    ensure!(
        points.iter().all(|p| p.0.is_finite() && p.1.is_finite()),
        "triangulation points must be finite"
    );
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[a].1.total_cmp(&points[b].1))
            .then(a.cmp(&b))
    });
    order.dedup_by(|b, a| points[*a] == points[*b]);
    if order.len() < 2 {
        return Ok(Vec::new());
    }
    let p = |i: usize| coord(points[i]);

    let first_off = order[2..]
        .iter()
        .position(|&k| orient2d(p(order[0]), p(order[1]), p(k)) != 0.0)
        .map(|i| i + 2);
    let Some(k) = first_off else {
        let mut edges: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect();
        edges.sort_unstable();
        return Ok(edges);
    };

    let mut tri = Triangulation::default();
    let apex = order[k];
    let left = orient2d(p(order[0]), p(order[1]), p(apex)) > 0.0;
    for w in order[..k].windows(2) {
        if left {
            tri.add([w[0], w[1], apex]);
        } else {
            tri.add([w[1], w[0], apex]);
        }
    }
    // Counter-clockwise hull.
    let mut hull: Vec<usize> = if left {
        order[..=k].to_vec()
    } else {
        std::iter::once(order[0])
            .chain(std::iter::once(apex))
            .chain(order[1..k].iter().rev().copied())
            .collect()
    };

    for &q in &order[k + 1..] {
        let n = hull.len();
        let visible: Vec<bool> = (0..n)
            .map(|i| orient2d(p(hull[i]), p(hull[(i + 1) % n]), p(q)) < 0.0)
            .collect();
        // q is lexicographically last, so it is outside the hull and sees a
        // nonempty contiguous chain of edges.
        let start = (0..n)
            .find(|&i| visible[i] && !visible[(i + n - 1) % n])
            .ok_or_else(|| Error::Internal("no visible hull edge during sweep".into()))?;
        let mut end = start;
        while visible[end % n] {
            let (a, b) = (hull[end % n], hull[(end + 1) % n]);
            tri.add([b, a, q]);
            end += 1;
        }
        // Hull vertices strictly between start and end are now interior.
        let first = hull[start];
        let last = hull[end % n];
        let mut next = Vec::with_capacity(n + 1);
        let mut i = end % n;
        loop {
            next.push(hull[i]);
            if hull[i] == first {
                break;
            }
            i = (i + 1) % n;
        }
        next.push(q);
        debug_assert_eq!(next[0], last);
        hull = next;
    }

    tri.legalize(points);
    let mut edges = BTreeSet::new();
    for t in &tri.tris {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    Ok(edges.into_iter().collect())
}

#[derive(Default)]
struct Triangulation {
    tris: Vec<[usize; 3]>,
    /// Directed edge -> triangle holding it in counter-clockwise order.
    by_edge: HashMap<(usize, usize), usize>,
}

impl Triangulation {
    fn add(&mut self, t: [usize; 3]) {
        let id = self.tris.len();
        self.tris.push(t);
        self.index(id);
    }

    fn index(&mut self, id: usize) {
        let t = self.tris[id];
        for e in 0..3 {
            self.by_edge.insert((t[e], t[(e + 1) % 3]), id);
        }
    }

    fn unindex(&mut self, id: usize) {
        let t = self.tris[id];
        for e in 0..3 {
            self.by_edge.remove(&(t[e], t[(e + 1) % 3]));
        }
    }

    /// Lawson flips until every interior edge is locally Delaunay.
    fn legalize(&mut self, points: &[(f64, f64)]) {
        let mut stack: Vec<(usize, usize)> = self.by_edge.keys().filter(|&&(a, b)| a < b).copied().collect();
        stack.sort_unstable();
        while let Some((a, b)) = stack.pop() {
            let (Some(&t1), Some(&t2)) = (self.by_edge.get(&(a, b)), self.by_edge.get(&(b, a))) else {
                continue;
            };
            let c = opposite(self.tris[t1], a, b);
            let d = opposite(self.tris[t2], b, a);
            let inside = incircle(coord(points[a]), coord(points[b]), coord(points[c]), coord(points[d]));
            if inside <= 0.0 {
                continue;
            }
            self.unindex(t1);
            self.unindex(t2);
            self.tris[t1] = [a, d, c];
            self.tris[t2] = [d, b, c];
            self.index(t1);
            self.index(t2);
            stack.extend([(a, d), (d, b), (b, c), (c, a)]);
        }
    }
}

/// Third vertex of a counter-clockwise triangle holding directed edge `a -> b`.
fn opposite(t: [usize; 3], a: usize, b: usize) -> usize {
    for e in 0..3 {
        if t[e] == a && t[(e + 1) % 3] == b {
            return t[(e + 2) % 3];
        }
    }
    unreachable!("edge ({a}, {b}) not in triangle {t:?}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub centroid: (f64, f64),
    /// Mean descriptor of the superpixel's pixels.
    pub descriptor: Vec<f32>,
    pub color: ColorStats,
    /// Superpixel id in the source map.
    pub superpixel: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    /// Endpoint node indices, `a < b`.
    pub a: usize,
    pub b: usize,
    /// Undirected angle to the x axis in `[0, pi)`.
    pub theta: f64,
    pub length: f64,
}

/// Undirected angle of the segment `p -> q` to the x axis, in `[0, pi)`.
pub fn edge_angle(p: (f64, f64), q: (f64, f64)) -> f64 {
    let t = (q.1 - p.1).atan2(q.0 - p.0).rem_euclid(std::f64::consts::PI);
    if t >= std::f64::consts::PI {
        0.0
    } else {
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl MatchGraph {
    /// Builds a graph with Delaunay edges over the node centroids.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<MatchGraph> {
        let pairs = if nodes.len() >= 2 {
            delaunay(&nodes.iter().map(|n| n.centroid).collect::<Vec<_>>())?
        } else {
            Vec::new()
        };
        Ok(Self::with_edges(nodes, &pairs))
    }

    /// Builds a graph with the given topology.
    pub fn with_edges(nodes: Vec<Node>, pairs: &[(usize, usize)]) -> MatchGraph {
        let edges = pairs
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (i.min(j), i.max(j));
                let (p, q) = (nodes[a].centroid, nodes[b].centroid);
                Edge {
                    a,
                    b,
                    theta: edge_angle(p, q),
                    length: (q.0 - p.0).hypot(q.1 - p.1),
                }
            })
            .collect();
        MatchGraph { nodes, edges }
    }

    /// Same topology and attributes with node positions replaced; edge
    /// angles and lengths are recomputed.
    pub fn with_positions(&self, positions: &[(f64, f64)]) -> MatchGraph {
        let mut nodes = self.nodes.clone();
        for (n, &p) in nodes.iter_mut().zip(positions) {
            n.centroid = p;
        }
        let pairs: Vec<(usize, usize)> = self.edges.iter().map(|e| (e.a, e.b)).collect();
        Self::with_edges(nodes, &pairs)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.nodes.iter().map(|n| n.centroid).collect()
    }

    /// Dense node x edge incidence matrix, row-major.
    pub fn incidence(&self) -> Vec<u8> {
        let m = self.edges.len();
        let mut t = vec![0u8; self.nodes.len() * m];
        for (k, e) in self.edges.iter().enumerate() {
            t[e.a * m + k] = 1;
            t[e.b * m + k] = 1;
        }
        t
    }

    /// Neighbor lists from the edge set.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// Plain-text dump: `node <i> <x> <y> <superpixel>` and
    /// `edge <a> <b> <theta> <length>` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "node {i} {:.3} {:.3} {}", n.centroid.0, n.centroid.1, n.superpixel);
        }
        for e in &self.edges {
            let _ = writeln!(s, "edge {} {} {:.6} {:.3}", e.a, e.b, e.theta, e.length);
        }
        s
    }

    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Graph over the superpixels of `spm`: node descriptors are the mean pixel
/// descriptors and node colors the superpixel color statistics.
pub fn build_graph(spm: &SuperpixelMap, field: &DescriptorField, image: &Image) -> Result<MatchGraph> {
    ensure!(!spm.is_empty(), "superpixel map is empty");
    let dims = field.dims();
    let nodes = spm
        .superpixels
        .iter()
        .map(|sp| {
            let mut acc = vec![0.0f64; dims];
            for &p in &sp.pixels {
                for (a, &v) in acc.iter_mut().zip(field.at(p)) {
                    *a += v as f64;
                }
            }
            let n = sp.pixels.len() as f64;
            Ok(Node {
                centroid: sp.centroid,
                descriptor: acc.into_iter().map(|v| (v / n) as f32).collect(),
                color: color_stats(image, &sp.pixels)?,
                superpixel: sp.id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MatchGraph::from_nodes(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpixel::{lab_image, slic, SlicParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every triangle with an empty circumcircle, by exhaustive search.
    fn brute_force_delaunay(pts: &[(f64, f64)]) -> Vec<(usize, usize)> {
        let n = pts.len();
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let (a, b, c) = (pts[i], pts[j], pts[k]);
                    let det = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                    if det.abs() < 1e-12 {
                        continue;
                    }
                    let d = 2.0 * det;
                    let (b2, c2) = (
                        (b.0 - a.0).powi(2) + (b.1 - a.1).powi(2),
                        (c.0 - a.0).powi(2) + (c.1 - a.1).powi(2),
                    );
                    let ux = ((c.1 - a.1) * b2 - (b.1 - a.1) * c2) / d;
                    let uy = ((b.0 - a.0) * c2 - (c.0 - a.0) * b2) / d;
                    let r2 = ux * ux + uy * uy;
                    let empty = (0..n).filter(|&m| m != i && m != j && m != k).all(|m| {
                        let (dx, dy) = (pts[m].0 - a.0 - ux, pts[m].1 - a.1 - uy);
                        dx * dx + dy * dy > r2
                    });
                    if empty {
                        edges.insert((i, j));
                        edges.insert((j, k));
                        edges.insert((i, k));
                    }
                }
            }
        }
        edges.into_iter().collect()
    }

    fn node(x: f64, y: f64) -> Node {
        Node {
            centroid: (x, y),
            descriptor: vec![0.0; 4],
            color: ColorStats {
                mean: [0.0; 3],
                std: [0.0; 3],
            },
            superpixel: 0,
        }
    }

    #[test]
    fn small_configurations() {
        assert_eq!(delaunay(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap().len(), 3);
        let square = delaunay(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]).unwrap();
        assert_eq!(square.len(), 5);
        assert_eq!(delaunay(&[(0.0, 0.0), (3.0, 1.0)]).unwrap(), vec![(0, 1)]);
        assert!(delaunay(&[(0.0, 0.0)]).is_err());
    }

    #[test]
    fn collinear_points_form_a_path() {
        let pts = [(2.0, 2.0), (0.0, 0.0), (3.0, 3.0), (1.0, 1.0)];
        assert_eq!(delaunay(&pts).unwrap(), vec![(0, 2), (0, 3), (1, 3)]);
    }

    #[test]
    fn duplicates_are_isolated() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 0.0)];
        let edges = delaunay(&pts).unwrap();
        assert_eq!(edges.len(), 3);
        assert!(edges.iter().all(|&(a, b)| a != 3 && b != 3));
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (0..25)
                .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
                .collect();
            assert_eq!(delaunay(&pts).unwrap(), brute_force_delaunay(&pts), "seed {seed}");
        }
    }

    #[test]
    fn leading_collinear_run_then_apex() {
        // Sorted order starts with a collinear run on x = 0.
        let pts = [
            (0.0, 0.0),
            (0.0, 1.0),
            (0.0, 2.0),
            (0.0, 3.0),
            (2.0, 1.5),
            (3.0, -1.0),
            (3.5, 4.0),
        ];
        assert_eq!(delaunay(&pts).unwrap(), brute_force_delaunay(&pts));
    }

    #[test]
    fn planarity_bound_and_no_self_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let pts: Vec<(f64, f64)> = (0..300)
            .map(|_| (rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)))
            .collect();
        let edges = delaunay(&pts).unwrap();
        assert!(edges.len() <= 3 * pts.len() - 6);
        assert!(edges.iter().all(|&(a, b)| a < b));
        let set: BTreeSet<_> = edges.iter().collect();
        assert_eq!(set.len(), edges.len());
    }

    #[test]
    fn edge_attributes() {
        let g = MatchGraph::with_edges(
            vec![node(0.0, 0.0), node(3.0, 4.0), node(5.0, 0.0), node(0.0, 7.0)],
            &[(0, 1), (0, 2), (3, 0)],
        );
        assert!((g.edges[0].length - 5.0).abs() < 1e-12);
        assert_eq!(g.edges[1].theta, 0.0);
        assert!((g.edges[2].theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // Endpoint order does not matter.
        assert!((edge_angle((3.0, 4.0), (0.0, 0.0)) - edge_angle((0.0, 0.0), (3.0, 4.0))).abs() < 1e-12);
        assert_eq!(edge_angle((1.0, 0.0), (0.0, 0.0)), 0.0);
    }

    #[test]
    fn incidence_has_two_ones_per_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nodes: Vec<Node> = (0..12).map(|_| node(rng.random(), rng.random())).collect();
        let g = MatchGraph::from_nodes(nodes).unwrap();
        let t = g.incidence();
        let m = g.edge_count();
        for (k, e) in g.edges.iter().enumerate() {
            let ones: Vec<usize> = (0..g.node_count()).filter(|&i| t[i * m + k] == 1).collect();
            assert_eq!(ones, vec![e.a, e.b]);
        }
    }

    #[test]
    fn graph_from_superpixels() {
        let img = Image::from_fn(40, 30, |x, y| [x as f32 / 40.0, y as f32 / 30.0, 0.5]);
        let field = crate::descriptors::dense_descriptors(&img, &Default::default()).unwrap();
        let lab = lab_image(&img);
        let mask: Vec<usize> = (0..img.len()).collect();
        let spm = slic(&img, &lab, &mask, 6, &SlicParams::default(), 0).unwrap();
        let g = build_graph(&spm, &field, &img).unwrap();
        assert_eq!(g.node_count(), spm.len());
        for (n, sp) in g.nodes.iter().zip(&spm.superpixels) {
            let d0: f64 = sp.pixels.iter().map(|&p| field.at(p)[0] as f64).sum::<f64>() / sp.pixels.len() as f64;
            assert!((n.descriptor[0] as f64 - d0).abs() < 1e-6);
        }
        let text = g.to_text();
        assert_eq!(text.lines().count(), g.node_count() + g.edge_count());
    }

    #[test]
    fn single_pixel_superpixel_keeps_pixel_descriptor() {
        let img = Image::from_fn(20, 20, |x, y| [((x * y) % 7) as f32 / 7.0, 0.2, 0.4]);
        let field = crate::descriptors::dense_descriptors(&img, &Default::default()).unwrap();
        let lab = lab_image(&img);
        let spm = slic(&img, &lab, &[47], 1, &SlicParams::default(), 0).unwrap();
        let g = build_graph(&spm, &field, &img).unwrap();
        assert_eq!(g.nodes[0].descriptor.as_slice(), field.at(47));
        assert!(g.edges.is_empty());
    }
}
