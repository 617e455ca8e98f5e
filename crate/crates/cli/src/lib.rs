//! Command-line front end: argument parsing, run settings and artifact
//! writers.

pub mod commands;
pub mod config;
pub mod pnm;
pub mod svg;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{Options, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "nke",
    version,
    about = "Train small classifiers and measure label retention under sign-gradient attacks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train(Options),
    /// Attack selected test images and dump them as PGM/PPM with a manifest.
    Attack(Options),
    /// Sweep ε × steps over the correctly classified test images.
    Sweep(Options),
    /// Plot a curves CSV as SVG.
    Render {
        /// CSV written by `sweep`.
        csv: PathBuf,
        #[command(flatten)]
        options: Options,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(opts) => commands::cmd_train(&Settings::resolve(&opts)?).map(drop),
        Command::Attack(opts) => commands::cmd_attack(&Settings::resolve(&opts)?).map(drop),
        Command::Sweep(opts) => commands::cmd_sweep(&Settings::resolve(&opts)?).map(drop),
        Command::Render { csv, options } => {
            let settings = Settings::resolve(&options)?;
            commands::cmd_render(&csv, &settings.out).map(drop)
        }
    }
}
