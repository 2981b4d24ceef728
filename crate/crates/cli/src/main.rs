mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "skillsel", version, about = "Terrain-aware locomotion skill selection toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Config file layered over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Export a terrain raster and, optionally, the heightfield seen from a pose.
    Terrain(commands::TerrainArgs),
    /// Collect a labeled dataset for one skill.
    Collect(commands::CollectArgs),
    /// Train a model on a dataset.
    Train(commands::TrainArgs),
    /// Run an evaluation protocol against trained models.
    Eval(commands::EvalArgs),
    /// Run the selector along a scripted course and log every tick.
    Demo(commands::DemoArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Terrain(a) => commands::terrain(&cli.common, a),
        Command::Collect(a) => commands::collect(&cli.common, a),
        Command::Train(a) => commands::train(&cli.common, a),
        Command::Eval(a) => commands::eval(&cli.common, a),
        Command::Demo(a) => commands::demo(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
