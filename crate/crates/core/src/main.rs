use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fpu_adiabatic::experiments::{run, validate_config, ExperimentKind, Settings};

/// Verification experiments for normal-mode packets of the FPU chain.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write results.csv, metadata.json, summary.txt.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse a config and print it with defaults filled in.
    Validate { config: PathBuf },
    /// List experiments with one-line descriptions.
    ListExperiments,
}

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn load(path: &Path) -> Result<Settings, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    validate_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{:<20} {}", kind.name(), kind.description());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(settings) => {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&settings).expect("settings serialize")
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_USAGE)
            }
        },
        Command::Run {
            config,
            out,
            threads,
        } => {
            let settings = match load(&config) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_USAGE);
                }
            };
            if let Some(k) = threads {
                if k == 0 {
                    eprintln!("error: --threads must be at least 1");
                    return ExitCode::from(EXIT_USAGE);
                }
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_USAGE);
                }
            }
            match run(&settings, out.as_deref()) {
                Ok(outcome) => {
                    for check in &outcome.report.checks {
                        println!("{}", check.line());
                    }
                    println!(
                        "wrote {} ({:.1} s)",
                        outcome.out_dir.display(),
                        outcome.wall_time
                    );
                    match outcome.report.first_failure() {
                        None => ExitCode::SUCCESS,
                        Some(c) => {
                            eprintln!("FAIL: first failing check {}: {}", c.id, c.detail);
                            ExitCode::from(EXIT_FAIL)
                        }
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_FAIL)
                }
            }
        }
    }
}
