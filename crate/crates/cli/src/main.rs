//! `hybridflow` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable input, no seeds, partial evaluation failure), 3 internal
//! invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybridflow::imagery::{flow_to_color, read_flow, write_flow, MaxMagnitude};
use hybridflow::pipeline::{compute, evaluate, report_path, write_visualizations, Metric, PipelineConfig, CONFIG_ENV};
use hybridflow::{Error, Image};

#[derive(Parser)]
#[command(
    name = "hybridflow",
    version,
    about = "Dense optical flow from hybrid descriptor and graph matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the flow from IMG1 to IMG2.
    Compute {
        img1: PathBuf,
        img2: PathBuf,
        /// Output flow file (.flo or KITTI .png); the run report is written
        /// next to it with a .json extension.
        #[arg(short, long)]
        output: PathBuf,
        /// Directory for debug rasters (labels, superpixels, seeds, flow).
        #[arg(long)]
        viz: Option<PathBuf>,
        /// key = value configuration file; defaults to $HYBRIDFLOW_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
        /// RNG seed, overriding the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores), overriding the configuration.
        #[arg(long)]
        jobs: Option<usize>,
        /// Extra key=value overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Ground-truth flow; its metrics are added to the report.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Score a directory of predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// epe, fi or both.
        #[arg(long, default_value = "both")]
        metric: String,
        /// Also write the table as CSV to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render a flow file with the standard color wheel.
    Viz {
        flow: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Magnitude mapped to full saturation; defaults to the field maximum.
        #[arg(long)]
        max: Option<f32>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Internal(_) => 3,
        _ => 2,
    }
}

fn load_config(
    file: Option<&Path>,
    seed: Option<u64>,
    jobs: Option<usize>,
    overrides: &[String],
) -> hybridflow::Result<PipelineConfig> {
    let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    let mut cfg = match file.map(Path::to_path_buf).or(env) {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> hybridflow::Result<u8> {
    match cli.command {
        Command::Compute {
            img1,
            img2,
            output,
            viz,
            config,
            seed,
            jobs,
            overrides,
            gt,
        } => {
            let cfg = load_config(config.as_deref(), seed, jobs, &overrides)?;
            let i1 = Image::load(&img1)?;
            let i2 = Image::load(&img2)?;
            let mut out = compute(&i1, &i2, &cfg)?;
            write_flow(&out.flow, &output)?;
            if let Some(gt) = gt {
                out.report.attach_metrics(&out.flow, &read_flow(gt)?)?;
            }
            out.report.write_json(report_path(&output))?;
            if let Some(dir) = viz {
                write_visualizations(dir, &out, &i1)?;
            }
            let r = &out.report;
            eprintln!(
                "{}: {} seeds ({} graph, {} small-cluster), {:.0} ms",
                output.display(),
                r.seeds.total,
                r.seeds.graph,
                r.seeds.small_cluster,
                r.timings_ms.total
            );
            Ok(0)
        }
        Command::Eval { pred, gt, metric, csv } => {
            let metric: Metric = metric.parse()?;
            let table = evaluate(&pred, &gt, metric)?;
            print!("{}", table.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, table.to_csv()).map_err(|e| Error::Io { path, source: e })?;
            }
            let failures = table.failures();
            if failures > 0 {
                eprintln!("{failures} of {} frames could not be scored", table.rows.len());
                return Ok(2);
            }
            Ok(0)
        }
        Command::Viz { flow, output, max } => {
            let field = read_flow(&flow)?;
            let scale = max.map_or(MaxMagnitude::Auto, MaxMagnitude::Fixed);
            flow_to_color(&field, scale).save_png(&output)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
