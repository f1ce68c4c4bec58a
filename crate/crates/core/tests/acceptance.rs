//! Runs the canonical config of every experiment that decides an
//! acceptance criterion and prints one verdict line per criterion.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use fpu_adiabatic::experiments::criteria::{acceptance_experiments, canonical_config, CRITERIA};
use fpu_adiabatic::experiments::{run, ExperimentKind, RunOutcome, Settings};

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut outcomes: HashMap<ExperimentKind, Result<RunOutcome, String>> = HashMap::new();
    for kind in acceptance_experiments() {
        let start = Instant::now();
        let result = Settings::from_config(canonical_config(kind))
            .and_then(|s| run(&s, Some(&dir.path().join(kind.name()))))
            .map_err(|e| e.to_string());
        eprintln!("ran {kind} in {:.1} s", start.elapsed().as_secs_f64());
        outcomes.insert(kind, result);
    }

    let mut failed = 0;
    for c in &CRITERIA {
        let line = match &outcomes[&c.experiment] {
            Err(e) => format!("FAIL criterion {}: {} ({}: error: {e})", c.id, c.title, c.experiment),
            Ok(outcome) => {
                let checks: Vec<_> = outcome
                    .report
                    .checks
                    .iter()
                    .filter(|k| k.criterion == Some(c.id))
                    .collect();
                let bad: Vec<_> = checks.iter().filter(|k| !k.passed).collect();
                match (checks.is_empty(), bad.first()) {
                    (true, _) => format!("FAIL criterion {}: {} (no check decided it)", c.id, c.title),
                    (false, None) => format!(
                        "PASS criterion {}: {} ({} check{}; {})",
                        c.id,
                        c.title,
                        checks.len(),
                        if checks.len() == 1 { "" } else { "s" },
                        checks[checks.len() - 1].detail
                    ),
                    (false, Some(k)) => format!(
                        "FAIL criterion {}: {} ({} of {} checks failed; first {}: {})",
                        c.id,
                        c.title,
                        bad.len(),
                        checks.len(),
                        k.id,
                        k.detail
                    ),
                }
            }
        };
        if line.starts_with("FAIL") {
            failed += 1;
        }
        println!("{line}");
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
