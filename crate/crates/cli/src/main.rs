mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// A failed command and the exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_USER: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

pub fn user(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_USER, error: error.into() }
}

pub fn backend(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_BACKEND, error: error.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Run(a) => commands::run(a),
        Command::Probe(a) => commands::probe(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
