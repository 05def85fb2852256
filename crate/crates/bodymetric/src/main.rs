use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = bodymetric::cli::Cli::parse();
    match bodymetric::cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
