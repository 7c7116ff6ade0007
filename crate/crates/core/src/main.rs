use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    stratsel::cli::run(stratsel::cli::Cli::parse())
}
