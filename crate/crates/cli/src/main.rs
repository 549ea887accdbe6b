use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod fitdir;
mod output;

use config::Resolver;
use error::{CliError, CliResult};

/// Bayesian mixed-effects hidden Markov and Markov models for ordinal panel
/// data.
#[derive(Parser)]
#[command(name = "panelhmm", version, about)]
struct Cli {
    /// Maximum number of worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Plain `key = value` file supplying any long option; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run MCMC chains and store the posterior draws.
    Fit(commands::fit::FitArgs),
    /// Simulate a panel from a parameter file.
    Simulate(commands::simulate::SimulateArgs),
    /// Convergence summaries and DIC of a fit.
    Diagnose(commands::diagnose::DiagnoseArgs),
    /// Posterior predictive checks of a fit.
    Ppc(commands::ppc::PpcArgs),
    /// Average predictive comparisons and subject-level transition matrices.
    Apc(commands::apc::ApcArgs),
    /// Most likely hidden-state paths and relapse episodes of an HMM fit.
    Viterbi(commands::viterbi::ViterbiArgs),
    /// Compare how an HMM fit and a Markov fit predict serial motifs.
    Serial(commands::serial::SerialArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let mut resolver = Resolver::new(cli.config.as_deref())?;
    if let Some(threads) = resolver.pick_opt("threads", cli.threads)? {
        if threads == 0 {
            return Err(CliError::input("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit(a) => commands::fit::run(a, resolver),
        Command::Simulate(a) => commands::simulate::run(a, resolver),
        Command::Diagnose(a) => commands::diagnose::run(a, resolver),
        Command::Ppc(a) => commands::ppc::run(a, resolver),
        Command::Apc(a) => commands::apc::run(a, resolver),
        Command::Viterbi(a) => commands::viterbi::run(a, resolver),
        Command::Serial(a) => commands::serial::run(a, resolver),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("panelhmm: {e}");
            e.exit_code()
        }
    }
}
