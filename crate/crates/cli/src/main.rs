//! `moegeo`: experiments on sparse routing geometry.
//!
//! Every command reads an optional JSON `--config`, then `MOEGEO_SEED`, then
//! its flags; later layers win. Exit codes: 0 success, 1 failed verification,
//! 2 configuration error, 3 numerical abort.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "moegeo", version, about = "Sparse routing geometry experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Greedy Top-k and OMP recovery rates across a coherence grid
    Barrier(commands::BarrierArgs),
    /// Stratified cross-validation of the MoE classifier
    Train(commands::TrainArgs),
    /// KL-optimal k-sparse projection of a routing distribution
    KlProject(commands::KlArgs),
    /// Greedy log-det selection against the exhaustive optimum
    DppSelect(commands::DppArgs),
    /// Entropy and load-balancing statistics of a random routing batch
    Info(commands::InfoArgs),
    /// Property suite over every module
    Verify(commands::VerifyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Barrier(a) => commands::barrier(a),
        Command::Train(a) => commands::train(a),
        Command::KlProject(a) => commands::kl_project(a),
        Command::DppSelect(a) => commands::dpp_select(a),
        Command::Info(a) => commands::info(a),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
