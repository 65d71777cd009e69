//! Batch pipeline around the uplift core: data generation, training,
//! prediction, evaluation and the multi-seed benchmark.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, CliResult};

use cli::{Cli, Command};

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::DescribeDgp(a) => commands::describe(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Bench(a) => commands::bench(a),
    }
}
