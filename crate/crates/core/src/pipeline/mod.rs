//! End-to-end driver, configuration, evaluation harness and debug rasters.

mod config;
mod evaluate;
mod visualize;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::coarse_cluster::{build_clusters, pair_clusters, Cluster, ClusterPair, Route, MIN_MATCH_PIXELS};
use crate::densify::{assemble_seeds, edge_cost, interpolate, refine};
use crate::descriptors::{classify_pixels, dense_descriptors, DescriptorField, LabelMap};
use crate::error::{ensure, Error, Result};
use crate::graph_build::build_graph;
use crate::graph_match::match_graphs;
use crate::imagery::{flow_metrics, FlowField, FlowMetrics, Image};
use crate::sparse_match::{seeds_from_regions, seeds_from_superpixel_matches, GraphPair, SeedOrigin, SeedSet};
use crate::superpixel::{lab_image, slic, target_count, SuperpixelMap};

pub use config::{PipelineConfig, CONFIG_ENV};
pub use evaluate::{evaluate, EvalRow, EvalTable, Metric};
pub use visualize::{label_raster, seed_overlay, superpixel_boundaries, write_label_png, write_visualizations};

/// Wall-clock stage timings in milliseconds. Per-cluster stages are summed
/// over cluster pairs, so with several workers they may exceed `total`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub descriptors: f64,
    pub clustering: f64,
    pub superpixels: f64,
    pub graph_matching: f64,
    pub sparse_matching: f64,
    pub interpolation: f64,
    pub refinement: f64,
    pub total: f64,
}

/// What happened to one cluster pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterReport {
    pub index: u16,
    pub route: Route,
    pub area1: usize,
    pub area2: usize,
    pub superpixels1: usize,
    pub superpixels2: usize,
    /// Frame-1 graph nodes with a surviving correspondence.
    pub matched_nodes: usize,
    pub unmatched_nodes: usize,
    pub affine_rejected: usize,
    /// Regions whose RANSAC had too few matches and kept them all.
    pub ransac_passthrough: usize,
    /// Seeds contributed before cross-cluster conflict resolution.
    pub seeds: usize,
    /// Unsegmented fragment pixels, matched pixel-wise instead of as graphs.
    pub residual1: usize,
    pub residual2: usize,
}

/// Seed counts after assembly.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SeedCounts {
    pub graph: usize,
    pub small_cluster: usize,
    pub total: usize,
}

/// Diagnostics of one [`compute`] run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub timings_ms: StageTimings,
    pub clusters1: usize,
    pub clusters2: usize,
    pub routes: BTreeMap<String, usize>,
    pub superpixels1: usize,
    pub superpixels2: usize,
    pub unmatched_nodes: usize,
    pub seeds: SeedCounts,
    /// Refinement energy before the first and after every warp.
    pub energies: Vec<f64>,
    pub cluster_pairs: Vec<ClusterReport>,
    /// Filled by [`RunReport::attach_metrics`] when ground truth is supplied.
    pub metrics: Option<FlowMetrics>,
}

impl RunReport {
    /// Scores `flow` against ground truth and records the result.
    pub fn attach_metrics(&mut self, flow: &FlowField, gt: &FlowField) -> Result<()> {
        self.metrics = Some(flow_metrics(flow, gt, None)?);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Path of the report written alongside a flow output: same stem, `.json`.
pub fn report_path(flow_path: impl AsRef<Path>) -> std::path::PathBuf {
    flow_path.as_ref().with_extension("json")
}

/// Everything [`compute`] produces.
#[derive(Clone, Debug)]
pub struct ComputeOutput {
    pub flow: FlowField,
    pub report: RunReport,
    /// Frame-1 class labels.
    pub labels: LabelMap,
    /// Frame-1 superpixel maps of the graph-matched clusters.
    pub superpixels: Vec<SuperpixelMap>,
    /// Assembled seeds that initialized interpolation.
    pub seeds: SeedSet,
}

/// Shared, read-only inputs of the per-cluster workers.
struct Frames<'a> {
    img: [&'a Image; 2],
    lab: [Vec<[f64; 3]>; 2],
    field: [DescriptorField; 2],
    clusters: [Vec<Cluster>; 2],
}

struct PairOutcome {
    seeds: SeedSet,
    report: ClusterReport,
    superpixels: Option<SuperpixelMap>,
    times: [f64; 3],
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Region ids are `cluster index << 32 | superpixel`, so every region of a
/// run owns a distinct RNG stream.
fn region_base(index: u16) -> u64 {
    (index as u64) << 32
}

/// Region id (within a cluster's range) of its unsegmented fragments.
const RESIDUAL_REGION: u64 = 0xFFFF_FFFF;

fn process_pair(frames: &Frames<'_>, pair: &ClusterPair, cfg: &PipelineConfig) -> Result<PairOutcome> {
    let (Some(i), Some(j)) = (pair.first, pair.second) else {
        return Err(Error::Internal(format!("routed cluster {} lacks a side", pair.index)));
    };
    let (c1, c2) = (&frames.clusters[0][i], &frames.clusters[1][j]);
    let mut report = ClusterReport {
        index: pair.index,
        route: pair.route,
        area1: c1.area(),
        area2: c2.area(),
        superpixels1: 0,
        superpixels2: 0,
        matched_nodes: 0,
        unmatched_nodes: 0,
        affine_rejected: 0,
        ransac_passthrough: 0,
        seeds: 0,
        residual1: 0,
        residual2: 0,
    };
    let mut times = [0.0; 3];
    match pair.route {
        Route::Large => {
            let t = Instant::now();
            let segment = |f: usize, c: &Cluster| {
                let kappa = target_count(c.area(), cfg.superpixel_size).min(c.area());
                slic(frames.img[f], &frames.lab[f], &c.pixels, kappa, &cfg.slic, c.index)
            };
            let spm1 = segment(0, c1)?;
            let spm2 = segment(1, c2)?;
            times[0] = ms(t);

            let mut seeds = SeedSet::default();
            if !spm1.is_empty() && !spm2.is_empty() {
                let t = Instant::now();
                let g1 = build_graph(&spm1, &frames.field[0], frames.img[0])?;
                let g2 = build_graph(&spm2, &frames.field[1], frames.img[1])?;
                let corr = match_graphs(&g1, &g2, &cfg.graph)?;
                times[1] = ms(t);

                let t = Instant::now();
                let graph_pair = GraphPair {
                    g1: &g1,
                    g2: &g2,
                    spm1: &spm1,
                    spm2: &spm2,
                    field1: &frames.field[0],
                    field2: &frames.field[1],
                };
                let (graph_seeds, seeding) = seeds_from_superpixel_matches(
                    &corr,
                    &graph_pair,
                    &cfg.sparse,
                    cfg.graph.unmatched_tau,
                    cfg.seed,
                    region_base(pair.index),
                );
                times[2] = ms(t);
                seeds = graph_seeds;
                report.matched_nodes = seeding.matched;
                report.unmatched_nodes = seeding.unmatched;
                report.affine_rejected = seeding.affine_rejected;
                report.ransac_passthrough = seeding.ransac_passthrough;
            }
            // Fragments too small to segment are matched like a small pair.
            let (r1, r2) = (&spm1.residual, &spm2.residual);
            if r1.len() >= MIN_MATCH_PIXELS && r2.len() >= MIN_MATCH_PIXELS {
                let t = Instant::now();
                let (extra, passthrough) = seeds_from_regions(
                    r1,
                    r2,
                    &frames.field[0],
                    &frames.field[1],
                    &cfg.sparse,
                    cfg.seed,
                    region_base(pair.index) | RESIDUAL_REGION,
                );
                times[2] += ms(t);
                report.ransac_passthrough += usize::from(passthrough);
                seeds = seeds.merge(extra);
            }
            report.superpixels1 = spm1.len();
            report.superpixels2 = spm2.len();
            report.residual1 = r1.len();
            report.residual2 = r2.len();
            report.seeds = seeds.len();
            Ok(PairOutcome {
                seeds,
                report,
                superpixels: Some(spm1),
                times,
            })
        }
        Route::Small => {
            let t = Instant::now();
            let (seeds, passthrough) = seeds_from_regions(
                &c1.pixels,
                &c2.pixels,
                &frames.field[0],
                &frames.field[1],
                &cfg.sparse,
                cfg.seed,
                region_base(pair.index),
            );
            times[2] = ms(t);
            report.ransac_passthrough = usize::from(passthrough);
            report.seeds = seeds.len();
            Ok(PairOutcome {
                seeds,
                report,
                superpixels: None,
                times,
            })
        }
        Route::Skipped => Err(Error::Internal("skipped pair reached a worker".into())),
    }
}

/// Estimates the flow from `img1` to `img2`.
///
/// Stages: dense descriptors, argmax classes, class clusters, cross-frame
/// routing; graph matching of superpixels for large pairs and direct pixel
/// matching for small ones, each filtered by epipolar RANSAC; seed assembly
/// in cluster-index order; edge-aware interpolation; variational refinement.
/// Cluster pairs run on a pool of `cfg.jobs` workers and are merged in a
/// fixed order, so the result is deterministic for a given config and seed.
pub fn compute(img1: &Image, img2: &Image, cfg: &PipelineConfig) -> Result<ComputeOutput> {
    cfg.validate()?;
    ensure!(
        img1.width() == img2.width() && img1.height() == img2.height(),
        "frames differ in size: {}x{} vs {}x{}",
        img1.width(),
        img1.height(),
        img2.width(),
        img2.height()
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;
    pool.install(|| run(img1, img2, cfg))
}

fn run(img1: &Image, img2: &Image, cfg: &PipelineConfig) -> Result<ComputeOutput> {
    let start = Instant::now();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (f1, f2) = rayon::join(
        || dense_descriptors(img1, &cfg.descriptor),
        || dense_descriptors(img2, &cfg.descriptor),
    );
    let field = [f1?, f2?];
    timings.descriptors = ms(t);

    let t = Instant::now();
    let labels = [classify_pixels(&field[0]), classify_pixels(&field[1])];
    let clusters = [build_clusters(&labels[0]), build_clusters(&labels[1])];
    let pairing = pair_clusters(&clusters[0], &clusters[1], cfg.area_threshold);
    timings.clustering = ms(t);

    let frames = Frames {
        img: [img1, img2],
        lab: [lab_image(img1), lab_image(img2)],
        field,
        clusters,
    };
    let active: Vec<&ClusterPair> = pairing.pairs.iter().filter(|p| p.route != Route::Skipped).collect();
    let outcomes = active
        .par_iter()
        .map(|p| process_pair(&frames, p, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut routes = BTreeMap::new();
    for route in [Route::Large, Route::Small, Route::Skipped] {
        routes.insert(format!("{route:?}").to_lowercase(), pairing.count(route));
    }
    let mut sets = Vec::with_capacity(outcomes.len());
    let mut superpixels = Vec::new();
    let mut cluster_pairs = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        timings.superpixels += o.times[0];
        timings.graph_matching += o.times[1];
        timings.sparse_matching += o.times[2];
        sets.push(o.seeds);
        superpixels.extend(o.superpixels);
        cluster_pairs.push(o.report);
    }
    let seeds = assemble_seeds(sets);
    if seeds.is_empty() {
        return Err(Error::NoSeeds {
            stage: if active.is_empty() {
                "cluster routing"
            } else {
                "sparse matching"
            },
        });
    }

    let t = Instant::now();
    let cost = edge_cost(img1);
    let dense = interpolate(&seeds, &cost, &cfg.interpolation)?;
    timings.interpolation = ms(t);

    let t = Instant::now();
    let refined = refine(&dense, img1, img2, &cfg.refinement)?;
    timings.refinement = ms(t);
    timings.total = ms(start);

    let report = RunReport {
        width: img1.width(),
        height: img1.height(),
        seed: cfg.seed,
        timings_ms: timings,
        clusters1: frames.clusters[0].len(),
        clusters2: frames.clusters[1].len(),
        routes,
        superpixels1: cluster_pairs.iter().map(|c| c.superpixels1).sum(),
        superpixels2: cluster_pairs.iter().map(|c| c.superpixels2).sum(),
        unmatched_nodes: cluster_pairs.iter().map(|c| c.unmatched_nodes).sum(),
        seeds: SeedCounts {
            graph: seeds.count(SeedOrigin::Graph),
            small_cluster: seeds.count(SeedOrigin::SmallCluster),
            total: seeds.len(),
        },
        energies: refined.energies,
        cluster_pairs,
        metrics: None,
    };
    let [labels1, _] = labels;
    Ok(ComputeOutput {
        flow: refined.flow,
        report,
        labels: labels1,
        superpixels,
        seeds,
    })
}
