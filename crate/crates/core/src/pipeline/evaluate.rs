//! Directory-level scoring of predicted flow against ground truth.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imagery::{flow_metrics, read_flow};

/// Which metrics to report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Epe,
    Fi,
    Both,
}

impl Metric {
    fn epe(self) -> bool {
        matches!(self, Metric::Epe | Metric::Both)
    }

    fn fi(self) -> bool {
        matches!(self, Metric::Fi | Metric::Both)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epe" => Ok(Metric::Epe),
            "fi" => Ok(Metric::Fi),
            "both" => Ok(Metric::Both),
            _ => Err(Error::Config(format!(
                "unknown metric `{s}` (expected epe, fi or both)"
            ))),
        }
    }
}

/// One scored (or failed) prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    /// File stem shared by prediction and ground truth.
    pub frame: String,
    pub epe: Option<f64>,
    /// Outlier fraction in `[0, 1]`.
    pub fi: Option<f64>,
    /// From the run report next to the prediction, when present.
    pub seeds: Option<usize>,
    pub runtime_ms: Option<f64>,
    /// Why the frame could not be scored.
    pub error: Option<String>,
}

/// Per-frame results and means over the successfully scored frames.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub metric: Metric,
    pub rows: Vec<EvalRow>,
    pub mean_epe: Option<f64>,
    pub mean_fi: Option<f64>,
}

const FLOW_EXTENSIONS: [&str; 2] = ["flo", "png"];

fn flow_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| FLOW_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Seed count and runtime from a run report, if one sits next to `pred`.
fn report_fields(pred: &Path) -> (Option<usize>, Option<f64>) {
    let Ok(text) = std::fs::read_to_string(super::report_path(pred)) else {
        return (None, None);
    };
    let Ok(json) = serde_json::from_str::<serde_json::Value>(&text) else {
        return (None, None);
    };
    let seeds = json["seeds"]["total"].as_u64().map(|v| v as usize);
    let runtime = json["timings_ms"]["total"].as_f64();
    (seeds, runtime)
}

fn score(pred: &Path, gt: &Path, metric: Metric) -> Result<(Option<f64>, Option<f64>)> {
    let p = read_flow(pred)?;
    let g = read_flow(gt)?;
    let m = flow_metrics(&p, &g, None)?;
    Ok((metric.epe().then_some(m.epe_all), metric.fi().then_some(m.fi_rate)))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores every `.flo`/`.png` prediction in `pred_dir` against the file with
/// the same stem in `gt_dir`; each file's codec follows its extension.
/// Frames with no ground truth or unreadable files become error rows and are
/// left out of the means. Fails only if a directory cannot be listed.
pub fn evaluate(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>, metric: Metric) -> Result<EvalTable> {
    let gt_files = flow_files(gt_dir.as_ref())?;
    let rows: Vec<EvalRow> = flow_files(pred_dir.as_ref())?
        .into_iter()
        .map(|pred| {
            let frame = stem(&pred);
            let (seeds, runtime_ms) = report_fields(&pred);
            let mut row = EvalRow {
                frame: frame.clone(),
                epe: None,
                fi: None,
                seeds,
                runtime_ms,
                error: None,
            };
            match gt_files.iter().find(|g| stem(g) == frame) {
                None => row.error = Some("missing ground truth".into()),
                Some(gt) => match score(&pred, gt, metric) {
                    Ok((epe, fi)) => {
                        row.epe = epe;
                        row.fi = fi;
                    }
                    Err(e) => row.error = Some(e.to_string()),
                },
            }
            row
        })
        .collect();
    Ok(EvalTable {
        metric,
        mean_epe: mean(rows.iter().filter_map(|r| r.epe)),
        mean_fi: mean(rows.iter().filter_map(|r| r.fi)),
        rows,
    })
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalTable {
    /// Rows that could not be scored.
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// CSV with columns `frame,epe,fi,seeds,runtime_ms,error`, one row per
    /// prediction and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,epe,fi,seeds,runtime_ms,error\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                csv_field(&r.frame),
                cell(r.epe),
                cell(r.fi),
                cell(r.seeds),
                cell(r.runtime_ms),
                csv_field(r.error.as_deref().unwrap_or(""))
            );
        }
        let _ = writeln!(out, "mean,{},{},,,", cell(self.mean_epe), cell(self.mean_fi));
        out
    }

    /// Human-readable table with aligned columns.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>, digits: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"));
        let mut lines: Vec<[String; 6]> = vec![[
            "frame".into(),
            "epe".into(),
            "fi".into(),
            "seeds".into(),
            "runtime_ms".into(),
            "error".into(),
        ]];
        for r in &self.rows {
            lines.push([
                r.frame.clone(),
                fmt(r.epe, 4),
                fmt(r.fi, 4),
                r.seeds.map_or_else(|| "-".to_string(), |s| s.to_string()),
                fmt(r.runtime_ms, 1),
                r.error.clone().unwrap_or_default(),
            ]);
        }
        lines.push([
            "mean".into(),
            fmt(self.mean_epe, 4),
            fmt(self.mean_fi, 4),
            String::new(),
            String::new(),
            String::new(),
        ]);
        let widths: Vec<usize> = (0..6)
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let row: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| {
                    if c == 0 || c == 5 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            out.push_str(row.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{write_flow, FlowField};

    fn field(shift: f32) -> FlowField {
        FlowField::from_fn(8, 6, |x, y| (x as f32 * 0.5 + shift, y as f32 - 2.0))
    }

    #[test]
    fn identical_directories_score_zero() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["a.flo", "b.png"] {
            write_flow(&field(0.0), dir.path().join(f)).unwrap();
        }
        let t = evaluate(dir.path(), dir.path(), Metric::Both).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.failures(), 0);
        assert_eq!(t.mean_epe, Some(0.0));
        assert_eq!(t.mean_fi, Some(0.0));
    }

    #[test]
    fn missing_and_corrupt_files_become_error_rows() {
        let pred = tempfile::tempdir().unwrap();
        let gt = tempfile::tempdir().unwrap();
        write_flow(&field(1.0), pred.path().join("a.flo")).unwrap();
        write_flow(&field(0.0), gt.path().join("a.png")).unwrap();
        write_flow(&field(0.0), pred.path().join("orphan.flo")).unwrap();
        std::fs::write(pred.path().join("broken.flo"), b"junk").unwrap();
        write_flow(&field(0.0), gt.path().join("broken.flo")).unwrap();
        let t = evaluate(pred.path(), gt.path(), Metric::Epe).unwrap();
        assert_eq!(t.failures(), 2);
        let a = t.rows.iter().find(|r| r.frame == "a").unwrap();
        assert!((a.epe.unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(a.fi, None);
        assert_eq!(t.mean_epe, a.epe);
        let csv = t.to_csv();
        assert!(csv.starts_with("frame,epe,fi,seeds,runtime_ms"));
        assert!(csv.contains("orphan,,,,,missing ground truth"));
        assert_eq!(t.to_text().lines().count(), 5);
    }

    #[test]
    fn report_fields_are_picked_up() {
        let dir = tempfile::tempdir().unwrap();
        write_flow(&field(0.0), dir.path().join("f.flo")).unwrap();
        std::fs::write(
            dir.path().join("f.json"),
            r#"{"seeds": {"total": 12}, "timings_ms": {"total": 34.5}}"#,
        )
        .unwrap();
        let t = evaluate(dir.path(), dir.path(), Metric::Both).unwrap();
        assert_eq!(t.rows[0].seeds, Some(12));
        assert_eq!(t.rows[0].runtime_ms, Some(34.5));
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!("both".parse::<Metric>().unwrap(), Metric::Both);
        assert!("rmse".parse::<Metric>().is_err());
    }
}
