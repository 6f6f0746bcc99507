mod commands;
mod inputs;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Train tabular classifiers, estimate parameter importances and unlearn
/// forget sets with (adaptive) selective synaptic dampening.
#[derive(Debug, Parser)]
#[command(name = "dampen", version, propagate_version = true)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true, display_order = 100)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose", display_order = 101)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Train(commands::TrainArgs),
    Importances(commands::ImportancesArgs),
    Unlearn(commands::UnlearnArgs),
    Mia(commands::MiaArgs),
    Sweep(commands::SweepArgs),
    Experiment(commands::ExperimentArgs),
    Synth(commands::SynthArgs),
    Inject(commands::InjectArgs),
}

/// Exit status for bad flags, bad config files and other input mistakes.
const EXIT_USAGE: u8 = 1;
/// Exit status for failures while running a valid command.
const EXIT_RUNTIME: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Importances(a) => commands::importances(a),
        Command::Unlearn(a) => commands::unlearn(a),
        Command::Mia(a) => commands::mia(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Synth(a) => commands::synth(a),
        Command::Inject(a) => commands::inject(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if commands::is_usage_error(&e) {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            })
        }
    }
}
