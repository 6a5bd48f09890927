mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Failure;

#[derive(Parser)]
#[command(name = "cgrgen", version, about = "Generative modelling of condensed-graph-of-reaction strings")]
struct Cli {
    /// Flat TOML file of settings for the command; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the token inventory of a corpus.
    Vocab(commands::VocabArgs),
    /// Train a model from scratch and write a checkpoint.
    Train(commands::TrainArgs),
    /// Continue training a checkpoint on a small corpus under a protocol.
    Finetune(commands::FinetuneArgs),
    /// Generate strings from a checkpoint.
    Sample(commands::SampleArgs),
    /// Score generated strings and write a report.
    Eval(commands::EvalArgs),
    /// Check each line for grammar, valence and aromaticity problems.
    Validate(commands::ValidateArgs),
    /// Print the reaction-center key of each line.
    Rc(commands::RcArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let file = cli.config.as_deref();
    let outcome = match &cli.command {
        Command::Vocab(a) => commands::vocab(file, a),
        Command::Train(a) => commands::train(file, a),
        Command::Finetune(a) => commands::finetune(file, a),
        Command::Sample(a) => commands::sample(file, a),
        Command::Eval(a) => commands::eval(file, a),
        Command::Validate(a) => commands::validate(file, a),
        Command::Rc(a) => commands::rc(file, a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
