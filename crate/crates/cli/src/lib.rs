//! Command-line driver: argument parsing, layered config, manifests and
//! the subcommand implementations.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;

use pprec_core::{ErrorKind, Result};

use args::{Cli, Command};

/// Process exit code for a failure class.
pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 5,
        ErrorKind::Internal => 70,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::PredictPopularity(a) => commands::predict_popularity(a),
    }
}
