use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = affect_cli::Cli::parse();
    match affect_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
