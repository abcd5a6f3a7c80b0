use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heatlab::experiment::{self, Experiment, Outcome, RunOptions};

/// Heat exchange between generalized Gibbs ensembles, by exact
/// diagonalization.
#[derive(Debug, Parser)]
#[command(name = "heatlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Sampling seed; overrides the config.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,

    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the protocol once and verify the requested identities.
    Run { config: PathBuf },
    /// Run over every (g, tau) in the config's lists.
    Scan { config: PathBuf },
    /// Check commutation, reality and temperature feasibility only.
    Verify { config: PathBuf },
}

fn execute(cli: &Cli) -> Result<Outcome, heatlab::Error> {
    let opts = RunOptions { out: cli.out.clone(), seed: cli.seed };
    let (path, action): (_, fn(&Experiment, &RunOptions) -> heatlab::Result<Outcome>) = match &cli.command {
        Command::Run { config } => (config, experiment::run),
        Command::Scan { config } => (config, experiment::scan),
        Command::Verify { config } => (config, experiment::verify),
    };
    let exp = experiment::load(path)?;
    action(&exp, &opts)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }

    match execute(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("results written to {}", outcome.out_dir.display());
            if !outcome.passed {
                eprintln!("error: at least one check failed");
                for c in outcome.result.assumptions.failures() {
                    match &c.detail {
                        Some(d) => eprintln!("  {}: {d}", c.name),
                        None => eprintln!("  {}: {:e} exceeds tolerance {:e}", c.name, c.value, c.tolerance),
                    }
                }
                for p in &outcome.result.points {
                    for r in p.reports.iter().filter(|r| !r.passed) {
                        eprintln!("  {}: max error {:e} exceeds tolerance {:e}", r.name, r.max_error, r.tolerance);
                    }
                }
            }
            ExitCode::from(experiment::exit_code(&outcome) as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::error_exit_code(&e) as u8)
        }
    }
}
