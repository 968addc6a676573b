use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = vlodtta::cli::Cli::parse();
    match vlodtta::cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
