use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driftwatch::cli::{error_json, execute, load_config, Command};

#[derive(Parser)]
#[command(name = "driftwatch", version, about = "Drift monitoring and model adaptation for embedding streams")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic manifest and embeddings file.
    Synth(Common),
    /// Validate and normalise a manifest into one NDJSON file.
    Ingest(Common),
    /// Train the baseline and save a checkpoint.
    TrainBaseline(Common),
    /// Grid-search windowing and detector settings.
    Tune(Common),
    /// Monitor the post-development stream without adapting.
    Scan(Common),
    /// Monitor and adapt on alerts.
    Run(Common),
    /// Score a saved checkpoint on the post-development stream.
    Evaluate(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Cmd::Synth(c) => (Command::Synth, c),
        Cmd::Ingest(c) => (Command::Ingest, c),
        Cmd::TrainBaseline(c) => (Command::TrainBaseline, c),
        Cmd::Tune(c) => (Command::Tune, c),
        Cmd::Scan(c) => (Command::Scan, c),
        Cmd::Run(c) => (Command::Run, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
    };
    let result = load_config(common.config.as_deref(), common.seed)
        .and_then(|cfg| execute(cmd, &cfg, &common.out));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(1)
        }
    }
}
