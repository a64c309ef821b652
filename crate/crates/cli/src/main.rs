use std::process::ExitCode;

use clap::Parser;
use n2f_cli::args::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = n2f_cli::run(&cli);
    if let Err(e) = &outcome {
        eprintln!("error: {e:#}");
    }
    n2f_cli::exit_code(&outcome)
}
