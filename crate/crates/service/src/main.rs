use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match artdisp::cli::run(artdisp::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
