use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match tracemem_cli::cli::run(tracemem_cli::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
