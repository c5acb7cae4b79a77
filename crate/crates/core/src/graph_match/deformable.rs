//! Alternating matching and global transform estimation.

use super::path::{path_follow_match, Correspondence};
use super::GraphMatchParams;
use crate::error::{ensure, Error, Result};
use crate::graph_build::MatchGraph;
use nalgebra::{Matrix3, Vector3};

/// Planar affine map `q = [a b; c d] p + t`, stored as `[a, b, tx, c, d, ty]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2(pub [f64; 6]);

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let m = &self.0;
        (m[0] * p.0 + m[1] * p.1 + m[2], m[3] * p.0 + m[4] * p.1 + m[5])
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let [a, b, tx, c, d, ty] = self.0;
        let det = a * d - b * c;
        let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
        if !det.is_finite() || det.abs() <= 1e-12 * scale * scale {
            return None;
        }
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Some(Affine2([ia, ib, -(ia * tx + ib * ty), ic, id, -(ic * tx + id * ty)]))
    }
}

/// Weighted correspondences `(p, q, w)`.
type Weighted = [((f64, f64), (f64, f64), f64)];

/// Weighted least-squares similarity (rotation, uniform scale, translation).
pub fn fit_similarity(pairs: &Weighted) -> Result<Affine2> {
    let wsum: f64 = pairs.iter().map(|t| t.2).sum();
    ensure!(wsum > 0.0, "no weighted pairs");
    let mean = |sel: fn(&((f64, f64), (f64, f64), f64)) -> (f64, f64)| {
        let (sx, sy) = pairs.iter().fold((0.0, 0.0), |acc, t| {
            let v = sel(t);
            (acc.0 + t.2 * v.0, acc.1 + t.2 * v.1)
        });
        (sx / wsum, sy / wsum)
    };
    let pm = mean(|t| t.0);
    let qm = mean(|t| t.1);
    let (mut spp, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for &(p, q, w) in pairs {
        let (px, py) = (p.0 - pm.0, p.1 - pm.1);
        let (qx, qy) = (q.0 - qm.0, q.1 - qm.1);
        spp += w * (px * px + py * py);
        sa += w * (px * qx + py * qy);
        sb += w * (px * qy - py * qx);
    }
    if spp <= 1e-12 * wsum {
        return Err(Error::Contract("degenerate similarity fit".into()));
    }
    let (a, b) = (sa / spp, sb / spp);
    Ok(Affine2([
        a,
        -b,
        qm.0 - (a * pm.0 - b * pm.1),
        b,
        a,
        qm.1 - (b * pm.0 + a * pm.1),
    ]))
}

/// Weighted least-squares affine map.
pub fn fit_affine(pairs: &Weighted) -> Result<Affine2> {
    let mut m = Matrix3::<f64>::zeros();
    let mut rx = Vector3::<f64>::zeros();
    let mut ry = Vector3::<f64>::zeros();
    for &(p, q, w) in pairs {
        let v = Vector3::new(p.0, p.1, 1.0);
        m += w * v * v.transpose();
        rx += w * q.0 * v;
        ry += w * q.1 * v;
    }
    let svd = m.svd(false, false);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 1e-10 * smax) {
        return Err(Error::Contract("degenerate affine fit".into()));
    }
    let lu = m.lu();
    let (Some(x), Some(y)) = (lu.solve(&rx), lu.solve(&ry)) else {
        return Err(Error::Contract("degenerate affine fit".into()));
    };
    Ok(Affine2([x[0], x[1], x[2], y[0], y[1], y[2]]))
}

/// Outcome of deformable matching.
#[derive(Clone, Debug)]
pub struct DeformableMatch {
    pub correspondence: Correspondence,
    /// Estimated map from first-graph to second-graph positions in force when
    /// the returned correspondence was computed.
    pub transform: Affine2,
    /// Outer rounds actually run.
    pub rounds: usize,
}

/// Alternates path-following matching against the second graph warped back
/// by the current transform with a weighted transform fit to the soft
/// correspondence (similarity in the first half of the rounds, affine after).
/// Keeps the correspondence with the best objective seen; a degenerate fit
/// ends the loop early.
pub fn deformable_match(g1: &MatchGraph, g2: &MatchGraph, params: &GraphMatchParams) -> Result<DeformableMatch> {
    let first = path_follow_match(g1, g2, params)?;
    let mut best = DeformableMatch {
        correspondence: first.clone(),
        transform: Affine2::IDENTITY,
        rounds: 1,
    };
    if g1.node_count() < 3 || g2.node_count() < 3 {
        return Ok(best);
    }
    let p1 = g1.positions();
    let q2 = g2.positions();
    let mut current = first;
    let rounds = params.deformable_rounds.max(1);
    for round in 1..rounds {
        let mut pairs = Vec::new();
        for (i, &p) in p1.iter().enumerate() {
            for (k, &q) in q2.iter().enumerate() {
                let w = current.soft_weight(i, k);
                if w > 1e-9 {
                    pairs.push((p, q, w));
                }
            }
        }
        let fit = if round * 2 <= rounds {
            fit_similarity(&pairs)
        } else {
            fit_affine(&pairs)
        };
        let Some((t, inv)) = fit.ok().and_then(|t| t.inverse().map(|inv| (t, inv))) else {
            break;
        };
        let warped: Vec<(f64, f64)> = q2.iter().map(|&q| inv.apply(q)).collect();
        let g2w = g2.with_positions(&warped);
        current = path_follow_match(g1, &g2w, params)?;
        best.rounds = round + 1;
        // Each objective is measured in its own warped frame, i.e. after
        // compensating the global motion.
        let score = current.objective;
        let incumbent = best.correspondence.objective;
        if score > incumbent + 1e-9 * incumbent.abs().max(1.0) {
            best.correspondence = current.clone();
            best.transform = t;
        }
    }
    Ok(best)
}
