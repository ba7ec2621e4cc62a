mod cli;
mod commands;
mod config;
mod io;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};

/// Exit status for each failure class.
mod status {
    pub const INTERNAL: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const TRAINING: u8 = 3;
    pub const REFERENCE_INVALID: u8 = 4;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mnpe::Error>() {
            return match e {
                mnpe::Error::Training { .. } => status::TRAINING,
                mnpe::Error::ReferenceInvalid(_) => status::REFERENCE_INVALID,
                _ => status::INPUT,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return status::INPUT;
        }
    }
    status::INTERNAL
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Logprob(a) => commands::logprob(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Benchmark(a) => commands::benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
