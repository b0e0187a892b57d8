//! Command-line driver for the diffractive network engine.

pub mod args;
pub mod commands;
pub mod config;
pub mod exit;
pub mod viz;

use args::{Cli, Command};
use exit::CliResult;

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Train(a) => {
            let dir = commands::run_train(a)?;
            println!("{}", dir.display());
        }
        Command::Eval(a) => {
            commands::run_eval(a)?;
        }
        Command::Infer(a) => {
            commands::run_infer(a)?;
        }
        Command::Propagate(a) => {
            commands::run_propagate(a)?;
        }
        Command::Gradcheck(a) => {
            commands::run_gradcheck(a)?;
        }
        Command::GenSynth(a) => {
            commands::run_gen_synth(a)?;
        }
    }
    Ok(())
}
