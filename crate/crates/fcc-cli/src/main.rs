//! `fcc` runs batch experiments over dyadic step-function sequences:
//! schedule steering, convergence certification and refutation, domination
//! audits, and limit-set probes, from a single JSON configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

const COMMANDS: &[&str] = &[
    "generate", "steer", "certify", "refute", "audit", "probe", "report",
];

#[derive(Parser)]
#[command(
    name = "fcc",
    version,
    about = "Forward convex combination laboratory",
    after_help = "Commands: generate | steer | certify | refute | audit | probe | report\n\
                  Exit codes: 0 completed (verdicts may be inconclusive), 2 precondition\n\
                  failed, 3 configuration error, 64 usage error."
)]
struct Args {
    /// One of: generate, steer, certify, refute, audit, probe, report.
    command: String,
    /// Experiment configuration (JSON); for `report`, an existing report.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides OUTPUT_DIR and the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for sampled work items.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker cap for independent work items (the current runner executes
    /// sequentially; results do not depend on this value).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = false)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(err) => {
            // Help and version are ordinary exits; anything else is usage.
            use clap::error::ErrorKind;
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(fcc_cli::EXIT_USAGE as u8),
            };
        }
    };
    if !COMMANDS.contains(&args.command.as_str()) {
        eprintln!(
            "unknown command `{}`; expected one of {}",
            args.command,
            COMMANDS.join(", ")
        );
        return ExitCode::from(fcc_cli::EXIT_USAGE as u8);
    }
    match fcc_cli::run_command(
        &args.command,
        &args.config,
        args.out.as_deref(),
        args.seed,
        args.threads,
        args.verbose,
    ) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
