//! Graph matching: node/edge affinities, a factorized quadratic assignment
//! objective, path-following optimization and deformable refinement.

mod affinity;
mod assignment;
mod deformable;
mod path;
mod sinkhorn;

pub use affinity::{
    affinity_element, angle_difference, edge_affinity, length_difference, node_affinity, symmetric_edge_affinity,
    AffinityFactors,
};
pub use assignment::{lapjv, lapjv_with_potentials, max_weight_assignment, min_cost_assignment};
pub use deformable::{deformable_match, fit_affine, fit_similarity, Affine2, DeformableMatch};
pub use path::{path_follow_factors, path_follow_match, unmatched_nodes, Correspondence, Unmatched};
pub use sinkhorn::{sinkhorn, stochastic_error};

/// Tuning of the matcher.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphMatchParams {
    /// Increment of the convex-to-concave blend.
    pub alpha_step: f64,
    /// Conditional-gradient iterations per blend step.
    pub max_inner_iters: usize,
    /// Relative duality-gap tolerance of the inner solver.
    pub inner_tol: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    /// Enables transform-compensated rounds.
    pub deformable: bool,
    pub deformable_rounds: usize,
    /// Soft-weight floor below which a match is dropped (`None`: `1/N`).
    pub unmatched_tau: Option<f64>,
}

impl Default for GraphMatchParams {
    fn default() -> Self {
        GraphMatchParams {
            alpha_step: 0.01,
            max_inner_iters: 20,
            inner_tol: 1e-6,
            sinkhorn_iters: 50,
            sinkhorn_tol: 1e-6,
            deformable: true,
            deformable_rounds: 4,
            unmatched_tau: None,
        }
    }
}

/// Matches with or without the deformable loop according to `params`.
pub fn match_graphs(
    g1: &crate::graph_build::MatchGraph,
    g2: &crate::graph_build::MatchGraph,
    params: &GraphMatchParams,
) -> crate::Result<Correspondence> {
    if params.deformable {
        Ok(deformable_match(g1, g2, params)?.correspondence)
    } else {
        path_follow_match(g1, g2, params)
    }
}

#[cfg(test)]
mod tests;
