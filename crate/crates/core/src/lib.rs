//! Dense optical flow from hybrid descriptor and graph matching.
//!
//! Frames are classified per pixel by the dominant channel of a dense
//! gradient-histogram descriptor. Pixels sharing a class form coarse clusters
//! that are paired across the two frames by class index. Large cluster pairs
//! are split into SLIC superpixels and matched as graphs with a factorized
//! path-following QAP solver; small pairs are matched pixel-to-pixel. The
//! resulting sparse seeds are densified by edge-aware interpolation and then
//! refined with a single-scale variational solver.
//!
//! Module map:
//! - [`imagery`]: images, flow fields, `.flo`/KITTI I/O, color coding, metrics.
//! - [`descriptors`]: dense rootSIFT-style descriptors, argmax classification,
//!   color statistics.
//! - [`coarse_cluster`]: class-index clusters and cross-frame routing.
//! - [`superpixel`]: masked SLIC.
//! - [`graph_build`]: Delaunay graphs over superpixel centroids.
//! - [`graph_match`]: affinities, path-following and deformable matching.
//! - [`sparse_match`]: pixel matching, RANSAC filters, seed extraction.
//! - [`densify`]: edge cost, sparse-to-dense interpolation, refinement.
//! - [`pipeline`]: configuration, end-to-end driver, evaluation, debug rasters.

// Negated comparisons such as `!(x > eps)` are deliberate: they also reject
// NaN. Index loops mirror the numeric recurrences they implement.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod coarse_cluster;
pub mod densify;
pub mod descriptors;
pub mod error;
pub mod graph_build;
pub mod graph_match;
pub mod imagery;
pub mod pipeline;
pub mod sparse_match;
pub mod superpixel;

pub use error::{Error, Result};
pub use imagery::{FlowField, FlowMetrics, Image};
