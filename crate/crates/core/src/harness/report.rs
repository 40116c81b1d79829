//! report.json, report.md and the plot tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::analyze::{AnalysisReport, Verdict, REPORT_SCHEMA_VERSION};
use super::log::SimLog;
use super::HarnessError;
use crate::scenario::ScenarioSpec;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const RUN_JSON: &str = "run.json";
pub const PLOT_LONGITUDINAL: &str = "plot_longitudinal.csv";
pub const PLOT_LATERAL: &str = "plot_lateral.csv";
pub const PLOT_ACCELERATION: &str = "plot_acceleration.csv";

/// Metadata written next to the logs of each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub schema_version: u32,
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub dt: f64,
    pub ticks: usize,
    /// File name and sha256 of each log.
    pub digests: Vec<(String, String)>,
}

pub fn write_run_metadata(dir: &Path, meta: &RunMetadata) -> Result<PathBuf, HarnessError> {
    let path = dir.join(RUN_JSON);
    let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Reads run.json from `dir`, if there is one.
pub fn read_run_metadata(dir: &Path) -> Result<Option<RunMetadata>, HarnessError> {
    let path = dir.join(RUN_JSON);
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| HarnessError::io(&path, e)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(HarnessError::io(&path, e)),
    }
}

fn header(names: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("# schema_version={REPORT_SCHEMA_VERSION}\n");
    s.push_str(&names.into_iter().collect::<Vec<_>>().join(","));
    s.push('\n');
    s
}

pub fn plot_longitudinal_csv(log: &SimLog) -> String {
    let mut s = header(
        ["t".to_string(), "ego_x".into(), "ego_v".into()]
            .into_iter()
            .chain(log.actor_ids.iter().flat_map(|id| [format!("actor{id}_x"), format!("actor{id}_v")])),
    );
    for r in &log.dynamics {
        write!(s, "{},{},{}", r.t, r.x, r.v).unwrap();
        for a in &r.actors {
            write!(s, ",{},{}", a.x, a.v).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn plot_lateral_csv(log: &SimLog, lane_lines: &[f64]) -> String {
    let mut s = header(
        ["t".to_string(), "ego_y".into()]
            .into_iter()
            .chain(log.actor_ids.iter().map(|id| format!("actor{id}_y")))
            .chain((1..=lane_lines.len()).map(|i| format!("lane_line{i}_y"))),
    );
    for r in &log.dynamics {
        write!(s, "{},{}", r.t, r.y).unwrap();
        for a in &r.actors {
            write!(s, ",{}", a.y).unwrap();
        }
        for l in lane_lines {
            write!(s, ",{l}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn plot_acceleration_csv(log: &SimLog) -> String {
    let mut s = header(["t", "ego_a", "ego_v", "gear"].map(String::from));
    for r in &log.dynamics {
        writeln!(s, "{},{},{},{}", r.t, r.a, r.v, r.gear).unwrap();
    }
    s
}

pub fn report_markdown(report: &AnalysisReport) -> String {
    let mut s = String::new();
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    writeln!(s, "# {}: {verdict}\n", report.scenario).unwrap();
    writeln!(s, "{} ticks at dt = {} s.\n", report.ticks, report.dt).unwrap();
    writeln!(s, "| check | result | detail |\n|---|---|---|").unwrap();
    for c in &report.checks {
        writeln!(s, "| {} | {} | {} |", c.name, if c.passed { "pass" } else { "fail" }, c.detail).unwrap();
    }
    writeln!(s, "\n## Crossings\n").unwrap();
    if report.crossings.is_empty() {
        writeln!(s, "none").unwrap();
    }
    for c in &report.crossings {
        writeln!(s, "- actor {} {:?} at {:.3} s across y = {}, gap {:.2} m", c.actor_id, c.kind, c.t_cross, c.line_y, c.gap_at_onset)
            .unwrap();
    }
    writeln!(s, "\n## Summary\n").unwrap();
    if let Some(g) = report.gap {
        writeln!(s, "- gap: min {:.2} m at {:.2} s, max {:.2} m at {:.2} s", g.min, g.t_min, g.max, g.t_max).unwrap();
    }
    let a = report.acceleration;
    writeln!(s, "- acceleration: min {:.3} m/s² at {:.2} s, max {:.3} m/s² at {:.2} s", a.min, a.t_min, a.max, a.t_max).unwrap();
    writeln!(s, "- max lateral error: {:.4} m", report.max_lateral_error).unwrap();
    writeln!(s, "- collision: {}", report.collision).unwrap();
    s
}

/// Writes the report and plot tables into `dir`.
pub fn emit_report(report: &AnalysisReport, log: &SimLog, spec: &ScenarioSpec, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let files = [
        (REPORT_JSON, serde_json::to_string_pretty(report).expect("report serializes")),
        (REPORT_MD, report_markdown(report)),
        (PLOT_LONGITUDINAL, plot_longitudinal_csv(log)),
        (PLOT_LATERAL, plot_lateral_csv(log, &spec.lane_reference_y)),
        (PLOT_ACCELERATION, plot_acceleration_csv(log)),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}

/// Parses report.json and checks that the verdict follows from the checks.
pub fn validate_report_json(text: &str) -> Result<AnalysisReport, String> {
    let r: AnalysisReport = serde_json::from_str(text).map_err(|e| format!("report.json: {e}"))?;
    if r.schema_version != REPORT_SCHEMA_VERSION {
        return Err(format!("unsupported schema_version {}", r.schema_version));
    }
    let expected = if r.checks.iter().all(|c| c.passed) { Verdict::Pass } else { Verdict::Fail };
    if r.verdict != expected {
        return Err(format!("verdict {:?} does not follow from the checks", r.verdict));
    }
    if r.ticks == 0 || r.dt.is_nan() || r.dt <= 0.0 {
        return Err("empty run".into());
    }
    Ok(r)
}
