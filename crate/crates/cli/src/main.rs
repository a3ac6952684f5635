mod args;
mod commands;
mod output;
mod validate;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] manisamp::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("validation suites failed: {0}")]
    ValidationFailed(String),
}

impl CliError {
    /// 1 for bad invocations, 2 for numerical or runtime failures.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_input_error() => 1,
            _ => 2,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Torus(a) => commands::torus(a),
        Command::Gamma(a) => commands::gamma(a),
        Command::Neyman(a) => commands::neyman(a),
        Command::Pitfall(a) => commands::pitfall(a),
        Command::Validate(a) => commands::validate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
