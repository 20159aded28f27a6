//! `hecate`: serve a world over HTTP, or run a scenario headlessly.
//!
//! Exit status is 0 on success, 1 when something fails at runtime and 2
//! for bad input: flags, scenario files and snapshots.

mod args;
mod load;
mod run;
mod serve;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Commands};

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(msg) | Failure::Runtime(msg) => f.write_str(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt().with_max_level(cli.command.log_level()).with_writer(std::io::stderr).init();
    let result = match cli.command {
        Commands::Run(args) => run::run(args),
        Commands::Serve(args) => serve::serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
