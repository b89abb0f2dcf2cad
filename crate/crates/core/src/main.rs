use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use datamarket::scenario::{
    run_scenario, verify_journal, RunOptions, Scenario, EXIT_INPUT, EXIT_INVARIANT, EXIT_PASS,
};

/// Runs data-market scenarios and checks ledger journals.
#[derive(Parser)]
#[command(name = "datamarket", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file and print its settlement report.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario tick limit.
        #[arg(long)]
        ticks: Option<u64>,
        #[arg(long)]
        journal_out: Option<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Replay a journal file and re-check ledger invariants.
    Verify { journal: PathBuf },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn write(path: &Option<PathBuf>, bytes: &[u8]) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            ticks,
            journal_out,
            report_out,
        } => {
            let outcome = Scenario::load(&scenario)
                .and_then(|s| run_scenario(&s, RunOptions { seed, ticks }));
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return code(EXIT_INPUT);
                }
            };
            let text = outcome.report.render();
            print!("{text}");
            let written = write(&journal_out, &outcome.journal)
                .and_then(|()| write(&report_out, text.as_bytes()));
            if let Err(e) = written {
                eprintln!("error: {e}");
                return code(EXIT_INPUT);
            }
            code(outcome.exit_code())
        }
        Command::Verify { journal } => {
            let bytes = match std::fs::read(&journal) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", journal.display());
                    return code(EXIT_INPUT);
                }
            };
            let report = verify_journal(&bytes);
            print!("{}", report.render());
            if let Some((seq, why)) = &report.failure {
                eprintln!("journal invalid at sequence {seq}: {why}");
            }
            code(if report.passed() { EXIT_PASS } else { EXIT_INVARIANT })
        }
    }
}
