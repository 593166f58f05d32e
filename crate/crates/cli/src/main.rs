//! Command-line front end for the width-study toolkit.
//!
//! Datasets are resolved against `$ATLASBENCH_DATA` (default `./data`).
//! Every subcommand takes an optional TOML config file whose keys the
//! flags mirror one-to-one; flags win. Exit codes: 0 success, 1 usage
//! error, 2 runtime error.

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod common;

use commands::{atlas, baseline, finetune, gen_data, lr_scan, render, scan, train, viz_neurons};

#[derive(Parser)]
#[command(name = "atlasbench")]
#[command(version)]
#[command(about = "Train small networks, map their activations, and scan transfer across widths")]
struct Cli {
    /// Verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Parse raw dataset files and cache derived datasets
    GenData(gen_data::GenDataArgs),
    /// Train one network and checkpoint it
    Train(train::TrainArgs),
    /// Build an activation atlas for a checkpoint: embed, bin, whiten,
    /// optimize a tile per cell, and render the mosaic
    Atlas(atlas::AtlasArgs),
    /// Optimize images for a sample of single neurons
    VizNeurons(viz_neurons::VizNeuronsArgs),
    /// Train a fresh linear head on a frozen checkpoint
    Finetune(finetune::FinetuneArgs),
    /// Train-freeze-finetune across a width/depth grid and plot it
    Scan(scan::ScanArgs),
    /// Pick a learning rate by training across a grid of rates
    LrScan(lr_scan::LrScanArgs),
    /// Rebuild PNGs from saved artifacts without recomputing
    Render(render::RenderArgs),
    /// Linear classifier on raw pixels, the transfer reference line
    Baseline(baseline::BaselineArgs),
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too; they are not errors.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(command: Commands) -> Result<()> {
    match command {
        Commands::GenData(args) => gen_data::run(args),
        Commands::Train(args) => train::run(args),
        Commands::Atlas(args) => atlas::run(args),
        Commands::VizNeurons(args) => viz_neurons::run(args),
        Commands::Finetune(args) => finetune::run(args),
        Commands::Scan(args) => scan::run(args),
        Commands::LrScan(args) => lr_scan::run(args),
        Commands::Render(args) => render::run(args),
        Commands::Baseline(args) => baseline::run(args),
    }
}
