//! Library side of the `n2f` command-line tool.

pub mod ablate;
pub mod args;
pub mod benchmark;
pub mod denoise;
pub mod evaluate;
pub mod files;
pub mod manifest;
pub mod noise;

use std::fmt;
use std::process::ExitCode;

use args::{Cli, Command};

/// Bad flags, paths or flag combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Runs a parsed command. `Ok(false)` means some files failed.
pub fn run(cli: &Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    match &cli.command {
        Command::Denoise(a) => denoise::run(a),
        Command::AddNoise(a) => noise::run(a),
        Command::Benchmark(a) => benchmark::run(a),
        Command::Ablate(a) => ablate::run(a),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<UsageError>() || matches!(e.downcast_ref::<n2f_core::Error>(), Some(n2f_core::Error::Config(_)))
    })
}

pub fn exit_code(outcome: &anyhow::Result<bool>) -> ExitCode {
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_PARTIAL),
        Err(e) if is_usage(e) => ExitCode::from(EXIT_USAGE),
        Err(_) => ExitCode::from(EXIT_PARTIAL),
    }
}
