//! Node and edge affinities and the factorized quadratic objective.

use crate::descriptors::{descriptor_distance, Norm};
use crate::error::{ensure, Result};
use crate::graph_build::{Edge, MatchGraph, Node};
use std::f64::consts::FRAC_PI_2;

/// Node affinity `exp(-L1(f_i, f_k))`.
pub fn node_affinity(p: &Node, q: &Node) -> Result<f64> {
    Ok((-descriptor_distance(&p.descriptor, &q.descriptor, Norm::L1)?).exp())
}

/// Angular difference of two undirected angles, wrapped to `[0, pi/2]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d).clamp(0.0, FRAC_PI_2)
}

/// Length difference normalized by the mean length (0 when both are 0).
pub fn length_difference(la: f64, lb: f64) -> f64 {
    let mean = 0.5 * (la + lb);
    if mean > 0.0 {
        (la - lb).abs() / mean
    } else {
        0.0
    }
}

/// Oriented edge affinity for `e_a = (p_i, p_j)`, `e_b = (p_k, p_l)` under the
/// alignment `i <-> k`, `j <-> l`.
#[allow(clippy::too_many_arguments)]
pub fn edge_affinity(
    pi: &Node,
    pj: &Node,
    pk: &Node,
    pl: &Node,
    theta_a: f64,
    theta_b: f64,
    len_a: f64,
    len_b: f64,
) -> Result<f64> {
    let dp = |x: &Node, y: &Node| descriptor_distance(&x.descriptor, &y.descriptor, Norm::L1);
    let dc = |x: &Node, y: &Node| x.color.l1(&y.color);
    let phi1_grad = dp(pi, pk)? + dp(pj, pl)?;
    let phi2_grad = (dp(pi, pj)? - dp(pk, pl)?).abs();
    let phi1_color = dc(pi, pk) + dc(pj, pl);
    let phi2_color = (dc(pi, pj) - dc(pk, pl)).abs();
    let total = phi1_grad
        + phi2_grad
        + phi1_color
        + phi2_color
        + angle_difference(theta_a, theta_b)
        + length_difference(len_a, len_b);
    Ok((-0.5 * total).exp())
}

/// Affinity of undirected edges: the larger of the two endpoint alignments.
pub fn symmetric_edge_affinity(g1: &MatchGraph, a: &Edge, g2: &MatchGraph, b: &Edge) -> Result<f64> {
    let n1 = &g1.nodes;
    let n2 = &g2.nodes;
    let straight = edge_affinity(
        &n1[a.a], &n1[a.b], &n2[b.a], &n2[b.b], a.theta, b.theta, a.length, b.length,
    )?;
    let crossed = edge_affinity(
        &n1[a.a], &n1[a.b], &n2[b.b], &n2[b.a], a.theta, b.theta, a.length, b.length,
    )?;
    Ok(straight.max(crossed))
}

/// Implicit representation of the pairwise affinity matrix `K`: node
/// affinities `A_p` (`N1 x N2`), edge affinities `A_e` (`M1 x M2`) and the
/// edge endpoint lists (the incidence structure of both graphs).
#[derive(Clone, Debug)]
pub struct AffinityFactors {
    pub n1: usize,
    pub n2: usize,
    /// Row-major `n1 x n2`.
    pub node: Vec<f64>,
    /// Row-major `m1 x m2`.
    pub edge: Vec<f64>,
    pub edges1: Vec<(usize, usize)>,
    pub edges2: Vec<(usize, usize)>,
    /// Per second-graph node: incident edges and their other endpoints.
    incident2: Vec<Vec<(usize, usize)>>,
    /// Edge index by endpoint pair `(min, max)`.
    lookup1: std::collections::HashMap<(usize, usize), usize>,
    lookup2: std::collections::HashMap<(usize, usize), usize>,
}

impl AffinityFactors {
    pub fn new(g1: &MatchGraph, g2: &MatchGraph) -> Result<AffinityFactors> {
        let (n1, n2) = (g1.node_count(), g2.node_count());
        ensure!(n1 >= 1 && n2 >= 1, "graph matching needs nonempty graphs");
        let cross = pairwise_distances(&g1.nodes, &g2.nodes)?;
        let node: Vec<f64> = cross.iter().map(|&(d, _)| (-d).exp()).collect();
        // Within-graph endpoint distances per edge.
        let within = |g: &MatchGraph| -> Result<Vec<(f64, f64)>> {
            g.edges
                .iter()
                .map(|e| {
                    let (p, q) = (&g.nodes[e.a], &g.nodes[e.b]);
                    Ok((
                        descriptor_distance(&p.descriptor, &q.descriptor, Norm::L1)?,
                        p.color.l1(&q.color),
                    ))
                })
                .collect()
        };
        let w1 = within(g1)?;
        let w2 = within(g2)?;
        let (m1, m2) = (g1.edge_count(), g2.edge_count());
        let mut edge = vec![0.0f64; m1 * m2];
        for (ia, a) in g1.edges.iter().enumerate() {
            for (ib, b) in g2.edges.iter().enumerate() {
                let geo = angle_difference(a.theta, b.theta) + length_difference(a.length, b.length);
                let second = (w1[ia].0 - w2[ib].0).abs() + (w1[ia].1 - w2[ib].1).abs();
                let term = |i: usize, j: usize, k: usize, l: usize| {
                    let (gi, ci) = cross[i * n2 + k];
                    let (gj, cj) = cross[j * n2 + l];
                    gi + gj + ci + cj
                };
                let first = term(a.a, a.b, b.a, b.b).min(term(a.a, a.b, b.b, b.a));
                edge[ia * m2 + ib] = (-0.5 * (first + second + geo)).exp();
            }
        }
        ensure!(node.iter().chain(&edge).all(|v| v.is_finite()), "non-finite affinity");
        let ends = |g: &MatchGraph| g.edges.iter().map(|e| (e.a, e.b)).collect::<Vec<_>>();
        let edges1 = ends(g1);
        let edges2 = ends(g2);
        let index = |es: &[(usize, usize)]| {
            es.iter()
                .enumerate()
                .map(|(k, &(a, b))| ((a.min(b), a.max(b)), k))
                .collect()
        };
        let mut incident2 = vec![Vec::new(); n2];
        for (b, &(k, l)) in edges2.iter().enumerate() {
            incident2[k].push((b, l));
            incident2[l].push((b, k));
        }
        Ok(AffinityFactors {
            n1,
            n2,
            incident2,
            lookup1: index(&edges1),
            lookup2: index(&edges2),
            node,
            edge,
            edges1,
            edges2,
        })
    }

    pub fn m1(&self) -> usize {
        self.edges1.len()
    }

    pub fn m2(&self) -> usize {
        self.edges2.len()
    }

    /// One entry of `K`, indexed by assignments `(i -> k)` and `(j -> l)`.
    pub fn element(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        if i == j && k == l {
            return self.node[i * self.n2 + k];
        }
        if i == j || k == l {
            return 0.0;
        }
        match (
            self.lookup1.get(&(i.min(j), i.max(j))),
            self.lookup2.get(&(k.min(l), k.max(l))),
        ) {
            (Some(&a), Some(&b)) => self.edge[a * self.m2() + b],
            _ => 0.0,
        }
    }

    /// Adds `K_off x` to `out`, where `K_off` is `K` without its diagonal
    /// and `x`, `out` are row-major `n x n` with `n >= n1, n2` (rows index
    /// the first graph, columns the second; padding rows/columns are inert).
    pub fn apply_pairwise(&self, x: &[f64], n: usize, out: &mut [f64]) {
        debug_assert!(n >= self.n1 && n >= self.n2 && x.len() == n * n && out.len() == n * n);
        let m2 = self.m2();
        for (ia, &(i, j)) in self.edges1.iter().enumerate() {
            let row = &self.edge[ia * m2..(ia + 1) * m2];
            let (lo, hi) = (i.min(j), i.max(j));
            let (head, tail) = out.split_at_mut(hi * n);
            let (out_lo, out_hi) = (&mut head[lo * n..(lo + 1) * n], &mut tail[..n]);
            let (x_lo, x_hi) = (&x[lo * n..(lo + 1) * n], &x[hi * n..(hi + 1) * n]);
            for (&w, &(k, l)) in row.iter().zip(&self.edges2) {
                out_lo[k] += w * x_hi[l];
                out_hi[l] += w * x_lo[k];
                out_lo[l] += w * x_hi[k];
                out_hi[k] += w * x_lo[l];
            }
        }
    }

    /// Adds `K_off y` to `out` for the permutation matrix `y` with
    /// `y[i, perm[i]] = 1` (`perm` over the padded size `n`); costs
    /// `O(M1 * max degree)` instead of `O(M1 * M2)`.
    pub fn apply_pairwise_permutation(&self, perm: &[usize], n: usize, out: &mut [f64]) {
        let m2 = self.m2();
        for (ia, &(i, j)) in self.edges1.iter().enumerate() {
            let row = &self.edge[ia * m2..(ia + 1) * m2];
            for (p, q) in [(i, j), (j, i)] {
                let l = perm[q];
                if l >= self.n2 {
                    continue;
                }
                for &(b, r) in &self.incident2[l] {
                    out[p * n + r] += row[b];
                }
            }
        }
    }

    /// Score of a one-to-one assignment `assign[i] = Some(k)`: `1_C^T K 1_C`.
    pub fn assignment_objective(&self, assign: &[Option<usize>]) -> f64 {
        let mut total = 0.0;
        for (i, a) in assign.iter().enumerate() {
            if let Some(k) = *a {
                total += self.node[i * self.n2 + k];
            }
        }
        let m2 = self.m2();
        for (ia, &(i, j)) in self.edges1.iter().enumerate() {
            let (Some(k), Some(l)) = (assign[i], assign[j]) else {
                continue;
            };
            if let Some(&b) = self.lookup2.get(&(k.min(l), k.max(l))) {
                total += 2.0 * self.edge[ia * m2 + b];
            }
        }
        total
    }

    /// Relaxed objective `<A_p, X> + x^T K_off x` on an `n x n` matrix; equals
    /// [`Self::assignment_objective`] on permutation matrices.
    pub fn relaxed_objective(&self, x: &[f64], n: usize) -> f64 {
        let mut kx = vec![0.0; n * n];
        self.apply_pairwise(x, n, &mut kx);
        self.linear_term(x, n) + dot(&kx, x)
    }

    /// Exact quadratic form `x^T K x` (node term quadratic) on `n x n`.
    pub fn quadratic_form(&self, x: &[f64], n: usize) -> f64 {
        let mut kx = vec![0.0; n * n];
        self.apply_pairwise(x, n, &mut kx);
        let mut diag = 0.0;
        for i in 0..self.n1 {
            for k in 0..self.n2 {
                diag += self.node[i * self.n2 + k] * x[i * n + k] * x[i * n + k];
            }
        }
        diag + dot(&kx, x)
    }

    pub(crate) fn linear_term(&self, x: &[f64], n: usize) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n1 {
            for k in 0..self.n2 {
                s += self.node[i * self.n2 + k] * x[i * n + k];
            }
        }
        s
    }

    /// Upper bound on the spectral radius of `K_off` (nonnegative and
    /// symmetric), via power iteration and the Collatz-Wielandt bound.
    pub(crate) fn pairwise_radius_bound(&self, n: usize) -> f64 {
        let mut x = vec![1.0; n * n];
        let mut kx = vec![0.0; n * n];
        let mut bound = f64::INFINITY;
        for _ in 0..30 {
            kx.iter_mut().for_each(|v| *v = 0.0);
            self.apply_pairwise(&x, n, &mut kx);
            let b = x.iter().zip(&kx).map(|(&xi, &ki)| ki / xi).fold(0.0f64, f64::max);
            bound = bound.min(b);
            let norm = kx.iter().cloned().fold(0.0f64, f64::max);
            if norm <= 0.0 {
                return 0.0;
            }
            for (xi, &ki) in x.iter_mut().zip(&kx) {
                *xi = ki / norm + 1e-6;
            }
        }
        bound
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Descriptor and color L1 distances for every node pair across graphs.
fn pairwise_distances(a: &[Node], b: &[Node]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for p in a {
        for q in b {
            out.push((
                descriptor_distance(&p.descriptor, &q.descriptor, Norm::L1)?,
                p.color.l1(&q.color),
            ));
        }
    }
    Ok(out)
}

/// Single entry of `K` straight from the graphs, without factors.
pub fn affinity_element(g1: &MatchGraph, g2: &MatchGraph, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    ensure!(
        i < g1.node_count() && j < g1.node_count() && k < g2.node_count() && l < g2.node_count(),
        "node index out of range"
    );
    if i == j && k == l {
        return node_affinity(&g1.nodes[i], &g2.nodes[k]);
    }
    if i == j || k == l {
        return Ok(0.0);
    }
    let find =
        |g: &MatchGraph, p: usize, q: usize| g.edges.iter().find(|e| e.a == p.min(q) && e.b == p.max(q)).copied();
    match (find(g1, i, j), find(g2, k, l)) {
        (Some(a), Some(b)) => {
            let n1 = &g1.nodes;
            let n2 = &g2.nodes;
            // Alignment i <-> k, j <-> l and the reverse reading of both edges.
            let one = edge_affinity(&n1[i], &n1[j], &n2[k], &n2[l], a.theta, b.theta, a.length, b.length)?;
            let two = edge_affinity(&n1[i], &n1[j], &n2[l], &n2[k], a.theta, b.theta, a.length, b.length)?;
            Ok(one.max(two))
        }
        _ => Ok(0.0),
    }
}
