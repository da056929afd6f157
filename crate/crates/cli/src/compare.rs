use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use perex::frontier::PlannerMode;
use perex::sim::TextureLevel;

use crate::batch::{ModeSummary, Summary};
use crate::config::read_json;
use crate::csv::format_sig;
use crate::{CliError, Result};

pub const COMPARISON_COLUMNS: [&str; 12] = [
    "source",
    "texture",
    "mode",
    "threshold",
    "success_mean",
    "success_std",
    "coverage_mean",
    "coverage_std",
    "success_diff_vs_greedy",
    "coverage_gain_vs_greedy",
    "success_delta",
    "coverage_delta",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub source: usize,
    pub texture: TextureLevel,
    pub mode: PlannerMode,
    pub threshold: f64,
    pub success_mean: f64,
    pub success_std: f64,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    /// Success-rate difference to greedy on the same seeds, if greedy ran.
    pub success_diff_vs_greedy: Option<f64>,
    /// Ratio of mean coverage to greedy's, minus one.
    pub coverage_gain_vs_greedy: Option<f64>,
    /// Differences to the first source holding the same texture and mode.
    pub success_delta: f64,
    pub coverage_delta: f64,
}

fn find(s: &Summary, mode: PlannerMode) -> Option<&ModeSummary> {
    s.modes.iter().find(|m| m.mode == mode)
}

/// Paired-seed comparison of batch summaries. All summaries must share seeds and thresholds.
pub fn compare_modes(summaries: &[Summary]) -> Result<Vec<ComparisonRow>> {
    let first = summaries.first().ok_or_else(|| CliError::Usage("compare needs at least one summary".into()))?;
    for (i, s) in summaries.iter().enumerate() {
        if s.seeds != first.seeds {
            return Err(CliError::Usage(format!("seed mismatch: source {i} has {:?}, source 0 has {:?}", s.seeds, first.seeds)));
        }
        if s.thresholds != first.thresholds {
            return Err(CliError::Usage(format!("threshold mismatch between source 0 and source {i}")));
        }
    }
    let mut rows = Vec::new();
    for (source, s) in summaries.iter().enumerate() {
        let greedy = find(s, PlannerMode::Greedy);
        let reference = summaries.iter().find(|r| r.texture == s.texture).expect("s itself matches");
        for m in &s.modes {
            let base = find(reference, m.mode).unwrap_or(m);
            for (k, &threshold) in s.thresholds.iter().enumerate() {
                let (succ, cov) = (m.success[k], m.coverage[k]);
                rows.push(ComparisonRow {
                    source,
                    texture: s.texture,
                    mode: m.mode,
                    threshold,
                    success_mean: succ.mean,
                    success_std: succ.std,
                    coverage_mean: cov.mean,
                    coverage_std: cov.std,
                    success_diff_vs_greedy: greedy.map(|g| succ.mean - g.success[k].mean),
                    coverage_gain_vs_greedy: greedy
                        .map(|g| g.coverage[k].mean)
                        .filter(|g| *g > 0.0)
                        .map(|g| cov.mean / g - 1.0),
                    success_delta: succ.mean - base.success[k].mean,
                    coverage_delta: cov.mean - base.coverage[k].mean,
                });
            }
        }
    }
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let opt = |x: Option<f64>| x.map(format_sig).unwrap_or_default();
    let mut s = COMPARISON_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.source,
            r.texture,
            r.mode,
            format_sig(r.threshold),
            format_sig(r.success_mean),
            format_sig(r.success_std),
            format_sig(r.coverage_mean),
            format_sig(r.coverage_std),
            opt(r.success_diff_vs_greedy),
            opt(r.coverage_gain_vs_greedy),
            format_sig(r.success_delta),
            format_sig(r.coverage_delta),
        );
    }
    s
}

/// Read `summary.json` from every directory, compare, and write `comparison.csv`
/// into `out` (default: the first input directory).
pub fn compare_dirs(dirs: &[PathBuf], out: Option<&Path>) -> Result<(PathBuf, Vec<ComparisonRow>)> {
    let summaries = dirs.iter().map(|d| read_json(&d.join("summary.json"))).collect::<Result<Vec<Summary>>>()?;
    let rows = compare_modes(&summaries)?;
    let dir = out.or(dirs.first().map(PathBuf::as_path)).expect("at least one directory");
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("comparison.csv");
    std::fs::write(&path, comparison_csv(&rows)).map_err(|e| CliError::io(&path, e))?;
    Ok((path, rows))
}
