use std::process::ExitCode;

use clap::Parser;
use srgnet::cli::{error_line, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(name, &e));
            ExitCode::FAILURE
        }
    }
}
