//! Library side of the `scm` binary: argument types, settings resolution,
//! the on-disk dataset layout, the synthetic fixture generator and one
//! module per subcommand.

pub mod args;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod synth;

use std::io::Write;

pub use error::{CliError, Result};

use args::{Cli, Command};
use config::Settings;

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let s = Settings::resolve(&cli.run)?;
    match &cli.command {
        Command::Synth(a) => commands::synth::run(&s, a, out),
        Command::Calibrate => commands::calibrate::run(&s, out),
        Command::Predict => commands::predict::run(&s, out),
        Command::Eval => commands::eval::run(&s, out),
        Command::Simulate(a) => commands::simulate::run(&s, a, out),
        Command::Gradcheck(a) => commands::gradcheck::run(&s, a, out),
        Command::Heatmap(a) => commands::heatmap::run(a, out),
    }
}
