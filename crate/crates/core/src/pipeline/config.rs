//! Flat `key = value` pipeline configuration.

use std::path::Path;
use std::str::FromStr;

use crate::coarse_cluster::DEFAULT_AREA_THRESHOLD;
use crate::densify::{InterpolationParams, RefinementParams};
use crate::descriptors::DescriptorParams;
use crate::error::{Error, Result};
use crate::graph_match::GraphMatchParams;
use crate::sparse_match::SparseParams;
use crate::superpixel::{SlicParams, DEFAULT_SUPERPIXEL_SIZE};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "HYBRIDFLOW_CONFIG";

/// Every tunable of the pipeline.
///
/// The text form is one `key = value` per line; `#` starts a comment and
/// blank lines are ignored. Unknown keys and unparsable values are errors.
/// Optional values accept `none`.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub descriptor: DescriptorParams,
    /// Clusters larger than this in both frames are matched as graphs.
    pub area_threshold: usize,
    /// Target superpixel area in pixels.
    pub superpixel_size: usize,
    pub slic: SlicParams,
    pub graph: GraphMatchParams,
    pub sparse: SparseParams,
    pub interpolation: InterpolationParams,
    pub refinement: RefinementParams,
    /// Global RNG seed; per-region streams derive from it.
    pub seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            descriptor: DescriptorParams::default(),
            area_threshold: DEFAULT_AREA_THRESHOLD,
            superpixel_size: DEFAULT_SUPERPIXEL_SIZE,
            slic: SlicParams::default(),
            graph: GraphMatchParams::default(),
            sparse: SparseParams::default(),
            interpolation: InterpolationParams::default(),
            refinement: RefinementParams::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl PipelineConfig {
    /// Parses a configuration text on top of the defaults and validates it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip(e))))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override such as a command-line `--set`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "descriptor.patch_size" => self.descriptor.patch_size = parse(key, value)?,
            "descriptor.cells" => self.descriptor.cells = parse(key, value)?,
            "descriptor.bins" => self.descriptor.bins = parse(key, value)?,
            "descriptor.sigma" => self.descriptor.sigma = parse(key, value)?,
            "cluster.area_threshold" => self.area_threshold = parse(key, value)?,
            "superpixel.size" => self.superpixel_size = parse(key, value)?,
            "superpixel.compactness" => self.slic.compactness = parse(key, value)?,
            "superpixel.iterations" => self.slic.iterations = parse(key, value)?,
            "match.alpha_step" => self.graph.alpha_step = parse(key, value)?,
            "match.max_inner_iters" => self.graph.max_inner_iters = parse(key, value)?,
            "match.inner_tol" => self.graph.inner_tol = parse(key, value)?,
            "match.sinkhorn_iters" => self.graph.sinkhorn_iters = parse(key, value)?,
            "match.sinkhorn_tol" => self.graph.sinkhorn_tol = parse(key, value)?,
            "match.deformable" => self.graph.deformable = parse(key, value)?,
            "match.deformable_rounds" => self.graph.deformable_rounds = parse(key, value)?,
            "match.unmatched_tau" => self.graph.unmatched_tau = parse_opt(key, value)?,
            "sparse.stride" => self.sparse.stride = parse(key, value)?,
            "sparse.ratio" => self.sparse.ratio = parse(key, value)?,
            "sparse.affine_tol" => self.sparse.affine_tol = parse_opt(key, value)?,
            "ransac.iters" => self.sparse.ransac_iters = parse(key, value)?,
            "ransac.thresh_px" => self.sparse.ransac_thresh_px = parse(key, value)?,
            "interp.k" => self.interpolation.k = parse(key, value)?,
            "interp.epsilon" => self.interpolation.epsilon = parse(key, value)?,
            "interp.sigma_fraction" => self.interpolation.sigma_fraction = parse(key, value)?,
            "refine.outer_iters" => self.refinement.outer_iters = parse(key, value)?,
            "refine.sor_iters" => self.refinement.sor_iters = parse(key, value)?,
            "refine.alpha" => self.refinement.alpha = parse(key, value)?,
            "refine.gamma" => self.refinement.gamma = parse(key, value)?,
            "refine.omega" => self.refinement.omega = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "jobs" => self.jobs = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// All keys with their current values, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("descriptor.patch_size", self.descriptor.patch_size.to_string()),
            ("descriptor.cells", self.descriptor.cells.to_string()),
            ("descriptor.bins", self.descriptor.bins.to_string()),
            ("descriptor.sigma", self.descriptor.sigma.to_string()),
            ("cluster.area_threshold", self.area_threshold.to_string()),
            ("superpixel.size", self.superpixel_size.to_string()),
            ("superpixel.compactness", self.slic.compactness.to_string()),
            ("superpixel.iterations", self.slic.iterations.to_string()),
            ("match.alpha_step", self.graph.alpha_step.to_string()),
            ("match.max_inner_iters", self.graph.max_inner_iters.to_string()),
            ("match.inner_tol", self.graph.inner_tol.to_string()),
            ("match.sinkhorn_iters", self.graph.sinkhorn_iters.to_string()),
            ("match.sinkhorn_tol", self.graph.sinkhorn_tol.to_string()),
            ("match.deformable", self.graph.deformable.to_string()),
            ("match.deformable_rounds", self.graph.deformable_rounds.to_string()),
            ("match.unmatched_tau", show_opt(&self.graph.unmatched_tau)),
            ("sparse.stride", self.sparse.stride.to_string()),
            ("sparse.ratio", self.sparse.ratio.to_string()),
            ("sparse.affine_tol", show_opt(&self.sparse.affine_tol)),
            ("ransac.iters", self.sparse.ransac_iters.to_string()),
            ("ransac.thresh_px", self.sparse.ransac_thresh_px.to_string()),
            ("interp.k", self.interpolation.k.to_string()),
            ("interp.epsilon", self.interpolation.epsilon.to_string()),
            ("interp.sigma_fraction", self.interpolation.sigma_fraction.to_string()),
            ("refine.outer_iters", self.refinement.outer_iters.to_string()),
            ("refine.sor_iters", self.refinement.sor_iters.to_string()),
            ("refine.alpha", self.refinement.alpha.to_string()),
            ("refine.gamma", self.refinement.gamma.to_string()),
            ("refine.omega", self.refinement.omega.to_string()),
            ("seed", self.seed.to_string()),
            ("jobs", self.jobs.to_string()),
        ]
    }

    /// Text form that [`PipelineConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Checks that thresholds and counts are positive and ranges sensible.
    pub fn validate(&self) -> Result<()> {
        let d = &self.descriptor;
        let g = &self.graph;
        let s = &self.sparse;
        let i = &self.interpolation;
        let r = &self.refinement;
        let checks: [(bool, &str); 22] = [
            (
                d.patch_size >= 1 && d.cells >= 1 && d.patch_size.is_multiple_of(d.cells),
                "descriptor.patch_size must be a positive multiple of descriptor.cells",
            ),
            (d.bins >= 1, "descriptor.bins must be positive"),
            (d.sigma > 0.0, "descriptor.sigma must be positive"),
            (self.area_threshold >= 1, "cluster.area_threshold must be positive"),
            (self.superpixel_size >= 1, "superpixel.size must be positive"),
            (self.slic.compactness > 0.0, "superpixel.compactness must be positive"),
            (self.slic.iterations >= 1, "superpixel.iterations must be positive"),
            (
                g.alpha_step > 0.0 && g.alpha_step <= 1.0,
                "match.alpha_step must lie in (0, 1]",
            ),
            (g.max_inner_iters >= 1, "match.max_inner_iters must be positive"),
            (g.inner_tol > 0.0, "match.inner_tol must be positive"),
            (
                g.sinkhorn_iters >= 1 && g.sinkhorn_tol > 0.0,
                "match.sinkhorn_* must be positive",
            ),
            (
                g.unmatched_tau.is_none_or(|t| t > 0.0),
                "match.unmatched_tau must be positive",
            ),
            (s.stride >= 1, "sparse.stride must be positive"),
            (s.ratio > 0.0 && s.ratio <= 1.0, "sparse.ratio must lie in (0, 1]"),
            (
                s.affine_tol.is_none_or(|t| t > 0.0),
                "sparse.affine_tol must be positive",
            ),
            (s.ransac_iters >= 1, "ransac.iters must be positive"),
            (s.ransac_thresh_px > 0.0, "ransac.thresh_px must be positive"),
            (i.k >= 1, "interp.k must be positive"),
            (
                i.epsilon > 0.0 && i.sigma_fraction > 0.0,
                "interp.epsilon and interp.sigma_fraction must be positive",
            ),
            (
                r.outer_iters >= 1 && r.sor_iters >= 1,
                "refine iteration counts must be positive",
            ),
            (
                r.alpha > 0.0 && r.gamma > 0.0,
                "refine.alpha and refine.gamma must be positive",
            ),
            (r.omega > 0.0 && r.omega < 2.0, "refine.omega must lie in (0, 2)"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).to_string())),
            None => Ok(()),
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}
