//! Experiment runner: JSON configs in, CSV tables, JSON metadata and a
//! PASS/FAIL summary out.

pub mod config;
pub mod criteria;
pub mod runner;
pub mod suites;

use serde::Serialize;

use crate::gibbs::SamplerDiagnostics;

pub use config::{validate_config, ExperimentConfig, ExperimentKind, Settings, TimeGrid};
pub use criteria::{canonical_config, Criterion, CRITERIA};
pub use runner::{run, write_artifacts, RunOutcome};
pub use suites::{columns, execute};

/// One PASS/FAIL decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub id: String,
    /// Acceptance criterion decided (in part) by this check.
    pub criterion: Option<u8>,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(
        id: impl Into<String>,
        criterion: Option<u8>,
        passed: bool,
        detail: impl Into<String>,
    ) -> Check {
        Check {
            id: id.into(),
            criterion,
            passed,
            detail: detail.into(),
        }
    }

    /// `PASS criterion 3: id: detail` or `FAIL check id: detail`.
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        match self.criterion {
            Some(c) => format!("{verdict} criterion {c}: {}: {}", self.id, self.detail),
            None => format!("{verdict} check {}: {}", self.id, self.detail),
        }
    }
}

/// Rows of a results table, already formatted.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &'static [&'static str]) -> Table {
        Table {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip form in exponent notation, so tables are
/// byte-reproducible.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:e}")
    }
}

/// Everything an experiment produces besides wall time.
#[derive(Debug, Clone)]
pub struct Report {
    pub table: Table,
    pub checks: Vec<Check>,
    pub diagnostics: Vec<SamplerDiagnostics>,
    /// `(N, smallest |τ·ω| among the corrector's triples)`.
    pub min_denominators: Vec<(usize, f64)>,
}

impl Report {
    pub fn new(columns: &'static [&'static str]) -> Report {
        Report {
            table: Table::new(columns),
            checks: Vec::new(),
            diagnostics: Vec::new(),
            min_denominators: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    /// Verdict on criterion `id`: `None` if no check decides it.
    pub fn criterion_passed(&self, id: u8) -> Option<bool> {
        let mut relevant = self.checks.iter().filter(|c| c.criterion == Some(id)).peekable();
        relevant.peek()?;
        Some(relevant.all(|c| c.passed))
    }
}
