//! Graduated convex-to-concave path following over the Birkhoff polytope.

use super::affinity::{dot, AffinityFactors};
use super::assignment::{lapjv_with_potentials, max_weight_assignment};
use super::sinkhorn::sinkhorn;
use super::GraphMatchParams;
use crate::error::{ensure, Result};
use crate::graph_build::MatchGraph;
use serde::Serialize;

/// Result of matching two graphs.
#[derive(Clone, Debug, Serialize)]
pub struct Correspondence {
    /// Node counts of the two graphs.
    pub n1: usize,
    pub n2: usize,
    /// Padded square size `max(n1, n2)`.
    pub n: usize,
    /// Row-major `n x n` doubly-stochastic matrix (rows: first graph).
    #[serde(skip)]
    pub soft: Vec<f64>,
    /// Match in the second graph for each first-graph node; `None` when
    /// assigned to a padding node.
    pub discrete: Vec<Option<usize>>,
    /// `1_C^T K 1_C` of the discrete correspondence.
    pub objective: f64,
    /// Relaxed objective after each path step (for diagnostics).
    #[serde(skip)]
    pub path_trace: Vec<f64>,
    /// Conditional-gradient iterations spent along the path.
    pub inner_iterations: usize,
}

impl Correspondence {
    pub fn soft_weight(&self, i: usize, k: usize) -> f64 {
        self.soft[i * self.n + k]
    }

    /// Matched `(i, k)` pairs between real nodes.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.discrete
            .iter()
            .enumerate()
            .filter_map(|(i, k)| k.map(|k| (i, k)))
            .collect()
    }
}

/// Unmatched nodes of both graphs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Unmatched {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Nodes left out of flow seeding: assigned to padding, or assigned with soft
/// weight strictly below `tau` (default `1/n`).
pub fn unmatched_nodes(corr: &Correspondence, tau: Option<f64>) -> Unmatched {
    let tau = tau.unwrap_or(1.0 / corr.n as f64);
    let mut second_used = vec![false; corr.n2];
    let mut first = Vec::new();
    for (i, k) in corr.discrete.iter().enumerate() {
        match *k {
            Some(k) if corr.soft_weight(i, k) >= tau => second_used[k] = true,
            _ => first.push(i),
        }
    }
    let second = (0..corr.n2).filter(|&k| !second_used[k]).collect();
    Unmatched { first, second }
}

/// Path-following graph matching.
pub fn path_follow_match(g1: &MatchGraph, g2: &MatchGraph, params: &GraphMatchParams) -> Result<Correspondence> {
    let factors = AffinityFactors::new(g1, g2)?;
    path_follow_factors(&factors, params)
}

/// Path following on precomputed factors.
pub fn path_follow_factors(f: &AffinityFactors, params: &GraphMatchParams) -> Result<Correspondence> {
    ensure!(
        params.alpha_step > 0.0 && params.alpha_step <= 1.0,
        "alpha_step must lie in (0, 1]"
    );
    let n = f.n1.max(f.n2);
    let nn = n * n;
    // Padded linear term.
    let mut lin = vec![0.0; nn];
    for i in 0..f.n1 {
        lin[i * n..i * n + f.n2].copy_from_slice(&f.node[i * f.n2..(i + 1) * f.n2]);
    }
    // beta(alpha) from -c (concave objective) to +c (convex objective).
    let c = f.pairwise_radius_bound(n) * (1.0 + 1e-9) + 1e-12;
    let beta = |alpha: f64| (2.0 * alpha - 1.0) * c;

    let mut x = vec![1.0 / n as f64; nn];
    let mut kx = vec![0.0; nn];
    f.apply_pairwise(&x, n, &mut kx);
    let mut grad = vec![0.0; nn];
    let mut ky = vec![0.0; nn];
    let mut neg = vec![0.0; nn];
    // Column potentials carried between the closely related linear problems.
    let mut potentials = Vec::new();
    let mut trace = Vec::new();
    let mut inner_iterations = 0;
    let steps = (1.0 / params.alpha_step).round().max(1.0) as usize;
    for s in 0..=steps {
        let alpha = (s as f64 * params.alpha_step).min(1.0);
        let b = beta(alpha);
        let value = |x: &[f64], kx: &[f64]| dot(&lin, x) + dot(kx, x) + b * dot(x, x);
        let mut current = value(&x, &kx);
        for _ in 0..params.max_inner_iters.max(1) {
            inner_iterations += 1;
            for t in 0..nn {
                grad[t] = lin[t] + 2.0 * kx[t] + 2.0 * b * x[t];
            }
            // Conditional-gradient vertex: the best permutation for `grad`.
            for (c, g) in neg.iter_mut().zip(&grad) {
                *c = -g;
            }
            let perm = lapjv_with_potentials(&neg, n, &mut potentials);
            let on_perm = |m: &[f64]| perm.iter().enumerate().map(|(i, &k)| m[i * n + k]).sum::<f64>();
            let slope = on_perm(&grad) - dot(&grad, &x);
            if slope <= params.inner_tol * (1.0 + current.abs()) {
                break;
            }
            ky.iter_mut().for_each(|v| *v = 0.0);
            f.apply_pairwise_permutation(&perm, n, &mut ky);
            // Direction d = y - x; K_off symmetric.
            let (kxx, kxy) = (dot(&kx, &x), on_perm(&kx));
            let quad = on_perm(&ky) - 2.0 * kxy + kxx;
            let norm2 = n as f64 - 2.0 * on_perm(&x) + dot(&x, &x);
            let curv = quad + b * norm2;
            let step = if curv < 0.0 {
                (-slope / (2.0 * curv)).min(1.0)
            } else {
                1.0
            };
            for v in x.iter_mut() {
                *v *= 1.0 - step;
            }
            for (i, &k) in perm.iter().enumerate() {
                x[i * n + k] += step;
            }
            for t in 0..nn {
                kx[t] += step * (ky[t] - kx[t]);
            }
            current += step * slope + step * step * curv;
        }
        if s % 10 == 9 {
            // Refresh the running product to keep rounding drift out.
            kx.iter_mut().for_each(|v| *v = 0.0);
            f.apply_pairwise(&x, n, &mut kx);
        }
        trace.push(value(&x, &kx));
    }
    for v in &mut x {
        *v = v.max(0.0);
    }
    sinkhorn(&mut x, n, params.sinkhorn_iters, params.sinkhorn_tol);
    let perm = max_weight_assignment(&x, n);
    let discrete: Vec<Option<usize>> = perm[..f.n1].iter().map(|&k| (k < f.n2).then_some(k)).collect();
    let objective = f.assignment_objective(&discrete);
    Ok(Correspondence {
        n1: f.n1,
        n2: f.n2,
        n,
        soft: x,
        discrete,
        objective,
        path_trace: trace,
        inner_iterations,
    })
}
