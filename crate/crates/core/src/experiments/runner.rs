//! Runs a validated config and writes `results.csv`, `metadata.json` and
//! `summary.txt` into the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::Settings;
use super::suites::execute;
use super::{Check, Report};
use crate::error::Result;
use crate::gibbs::SamplerDiagnostics;

pub const CSV_FILE: &str = "results.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Build identifier baked in at compile time.
pub const GIT_DESCRIBE: &str = env!("FPU_GIT_DESCRIBE");

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub out_dir: PathBuf,
    pub wall_time: f64,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

#[derive(Serialize)]
struct ThetaEntry {
    n: usize,
    beta: f64,
    theta: f64,
    log_q_theta: f64,
}

#[derive(Serialize)]
struct DenominatorEntry {
    n: usize,
    min_denominator: f64,
}

#[derive(Serialize)]
struct Metadata<'a> {
    experiment: &'static str,
    config: &'a Settings,
    git_describe: &'static str,
    wall_time_seconds: f64,
    passed: bool,
    first_failure: Option<&'a str>,
    checks: &'a [Check],
    sampler_diagnostics: &'a [SamplerDiagnostics],
    theta: Vec<ThetaEntry>,
    min_denominators: Vec<DenominatorEntry>,
}

/// Executes `settings` and writes the artifacts to `out_dir`, or to the
/// config's `output` when `None`.
pub fn run(settings: &Settings, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let start = Instant::now();
    let report = execute(settings)?;
    let wall_time = start.elapsed().as_secs_f64();
    let out_dir = out_dir.map_or_else(|| settings.output.clone(), Path::to_path_buf);
    write_artifacts(settings, &report, &out_dir, wall_time)?;
    Ok(RunOutcome {
        report,
        out_dir,
        wall_time,
    })
}

pub fn write_artifacts(
    settings: &Settings,
    report: &Report,
    dir: &Path,
    wall_time: f64,
) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut csv = csv::Writer::from_path(dir.join(CSV_FILE))?;
    csv.write_record(report.table.columns)?;
    for row in &report.table.rows {
        csv.write_record(row)?;
    }
    csv.flush()?;

    let metadata = Metadata {
        experiment: settings.experiment.name(),
        config: settings,
        git_describe: GIT_DESCRIBE,
        wall_time_seconds: wall_time,
        passed: report.passed(),
        first_failure: report.first_failure().map(|c| c.id.as_str()),
        checks: &report.checks,
        sampler_diagnostics: &report.diagnostics,
        theta: report
            .diagnostics
            .iter()
            .map(|d| ThetaEntry {
                n: d.n,
                beta: d.beta,
                theta: d.theta,
                log_q_theta: d.log_q_theta,
            })
            .collect(),
        min_denominators: report
            .min_denominators
            .iter()
            .map(|&(n, v)| DenominatorEntry {
                n,
                min_denominator: v,
            })
            .collect(),
    };
    fs::write(
        dir.join(METADATA_FILE),
        serde_json::to_string_pretty(&metadata)? + "\n",
    )?;

    fs::write(dir.join(SUMMARY_FILE), summary(settings, report))?;
    Ok(())
}

/// Plain-text verdict: one line per check, then the overall result.
pub fn summary(settings: &Settings, report: &Report) -> String {
    let mut out = format!(
        "experiment: {}\nseed: {}\nrows: {}\n",
        settings.experiment,
        settings.seed,
        report.table.rows.len()
    );
    for check in &report.checks {
        out.push_str(&check.line());
        out.push('\n');
    }
    match report.first_failure() {
        None => out.push_str("overall: PASS\n"),
        Some(c) => out.push_str(&format!("overall: FAIL (first failure: {})\n", c.id)),
    }
    out
}

