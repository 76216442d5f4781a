use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hamlearn::checks;
use hamlearn::cli::{self, ExperimentConfig, TableFormat};

#[derive(Parser)]
#[command(
    name = "hamlearn",
    about = "Kernel-based identification and forecasting of Hamiltonian systems",
    version
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep from a config file.
    Run {
        /// Path to the JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Bound on worker parallelism across sweep cells and seeds.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render result tables from a results directory.
    Table {
        /// Directory containing errors.csv from a previous run.
        #[arg(long)]
        results: PathBuf,
        /// Output format: pretty or csv.
        #[arg(long, default_value = "pretty")]
        format: TableFormat,
    },
    /// Run the invariant/property suite on small instances.
    Check,
}

fn seed_offset() -> Result<u64, String> {
    match std::env::var(cli::SEED_OFFSET_ENV) {
        Ok(text) => text
            .parse()
            .map_err(|e| format!("{}: {e}", cli::SEED_OFFSET_ENV)),
        Err(_) => Ok(0),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match args.command {
        Command::Run { config, jobs, out } => {
            let offset = match seed_offset() {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let config = match ExperimentConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let out_dir = out
                .or_else(|| config.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            match cli::run_sweep(&config, jobs, &out_dir, offset) {
                Ok(summary) => {
                    println!(
                        "wrote {} ({} cells ok, {} failed, {} seed failures)",
                        summary.out_dir.display(),
                        summary.cells_ok,
                        summary.cells_failed,
                        summary.seed_failures
                    );
                    ExitCode::from(summary.exit_code as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    let code = if matches!(e, cli::CliError::Config(_)) {
                        1
                    } else {
                        3
                    };
                    ExitCode::from(code)
                }
            }
        }
        Command::Table { results, format } => match cli::render_table(&results, format) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Check => {
            let reports = checks::run_all();
            let mut failed = 0;
            for report in &reports {
                let status = if report.passed { "PASS" } else { "FAIL" };
                println!("check {:<40} {} — {}", report.name, status, report.detail);
                if !report.passed {
                    failed += 1;
                }
            }
            if failed == 0 {
                println!("all {} checks passed", reports.len());
                ExitCode::SUCCESS
            } else {
                println!("{failed} of {} checks failed", reports.len());
                ExitCode::from(2)
            }
        }
    }
}
