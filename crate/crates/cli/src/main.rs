//! `savt` — generate toy video datasets, train small classifiers, run
//! sparse adversarial video attacks against them, and aggregate the results.

mod commands;
mod config;
mod runner;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "savt",
    about = "Sparse adversarial video attack toolkit",
    version,
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate a synthetic moving-shape video dataset.
    Gen(commands::GenArgs),
    /// Train a video classifier on a dataset directory.
    Train(commands::TrainArgs),
    /// Attack a dataset and emit one result row per video.
    Attack(commands::AttackArgs),
    /// Re-run an attack over a list of lambda or budget values.
    Sweep(commands::SweepArgs),
    /// Measure how attacks built on one model transfer to others.
    Transfer(commands::TransferArgs),
    /// Aggregate a result CSV into summary tables.
    Report(commands::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Commands::Gen(args) => commands::cmd_gen(args),
        Commands::Train(args) => commands::cmd_train(args),
        Commands::Attack(args) => commands::cmd_attack(args),
        Commands::Sweep(args) => commands::cmd_sweep(args),
        Commands::Transfer(args) => commands::cmd_transfer(args),
        Commands::Report(args) => commands::cmd_report(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
