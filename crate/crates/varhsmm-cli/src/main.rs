//! Command-line interface over the varhsmm library.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 validation/parse failure,
//! 3 non-convergence under --strict. Every command writes a manifest.json
//! capturing inputs (by checksum), configuration, tool version, and seed, so
//! a run can be reproduced byte for byte.

mod args;
mod commands;
mod csvio;
mod errors;
mod manifest;

use clap::Parser;

use args::{Cli, Command};
use errors::CliResult;

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => commands::cmd_simulate(a),
        Command::Fit(a) => {
            commands::configure_threads(a.threads)?;
            commands::cmd_fit(a)
        }
        Command::Decode(a) => commands::cmd_decode(a),
        Command::Forecast(a) => commands::cmd_forecast(a),
        Command::Returns(a) => commands::cmd_returns(a),
        Command::Correlate(a) => commands::cmd_correlate(a),
        Command::Compare(a) => {
            commands::configure_threads(a.threads)?;
            commands::cmd_compare(a)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
