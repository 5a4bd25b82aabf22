//! Command-line entry points tying the pipeline together.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "divskill",
    version,
    about = "Residual skill optimization, candidate selection, and verification for text-to-SQL ensembles"
)]
struct Cli {
    /// Worker-thread cap for parallel sections.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run batch-sequential residual skill optimization.
    Optimize(commands::optimize::OptimizeArgs),
    /// Generate candidates per skill and select one SQL per instance.
    Infer(commands::infer::InferArgs),
    /// Compute the metrics report from infer outputs.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Check the greedy (1 - 1/e) guarantee on random matrices.
    VerifyGreedy(commands::verify_greedy::VerifyGreedyArgs),
    /// Summarize behavioral diversity from recorded trajectories.
    AnalyzeTrajectories(commands::analyze::AnalyzeArgs),
    /// Generate a synthetic dataset and seed pool.
    Simulate(commands::simulate::SimulateArgs),
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Optimize(args) => commands::optimize::run_command(args),
        Command::Infer(args) => commands::infer::run_command(args, cli.jobs),
        Command::Evaluate(args) => commands::evaluate::run_command(args),
        Command::VerifyGreedy(args) => commands::verify_greedy::run_command(args),
        Command::AnalyzeTrajectories(args) => commands::analyze::run_command(args),
        Command::Simulate(args) => commands::simulate::run_command(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            if matches!(error.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{error}");
                return ExitCode::SUCCESS;
            }
            eprint!("{error}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(2)
        }
    }
}
