mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] lovasz_core::Error),
}

const PROPERTY_FAILURE: u8 = 1;
const USAGE_ERROR: u8 = 2;

fn run(cli: &Cli) -> Result<bool, CliError> {
    match &cli.command {
        Command::Check(a) => commands::check(a),
        Command::Surface(a) => commands::surface(a).map(|_| true),
        Command::Synth(a) => commands::synth(a).map(|_| true),
        Command::Train(a) => commands::train(a).map(|_| true),
        Command::Eval(a) => commands::eval(a).map(|_| true),
        Command::Compare(a) => commands::compare(a).map(|_| true),
        Command::Gap(a) => commands::gap(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let argv = match args::merge_config(std::env::args_os().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE_ERROR } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(PROPERTY_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(USAGE_ERROR)
        }
    }
}
