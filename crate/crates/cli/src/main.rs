use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = aru_cli::Cli::parse();
    match aru_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
