use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use factgap::harness::output::{run_command, Command};
use factgap::harness::ExperimentConfig;
use factgap::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Gen,
    Gap,
    Ood,
    Icl,
    Smalldata,
    All,
}

/// Fact-triple fine-tuning simulator.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML config; defaults are used for missing keys or when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of `run.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(n) => {
            println!("wrote {n} files");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Diverged { .. } => 3,
                _ => 1,
            })
        }
    }
}

fn run(cli: &Cli) -> factgap::Result<usize> {
    let config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seeds = cli
        .seed
        .map_or_else(|| config.run.seeds.clone(), |s| vec![s]);
    let out = cli
        .out
        .clone()
        .or_else(|| config.run.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("factgap-out"));
    let cmd = match cli.command {
        Cmd::Gen => Command::Gen,
        Cmd::Gap => Command::Gap,
        Cmd::Ood => Command::Ood,
        Cmd::Icl => Command::Icl,
        Cmd::Smalldata => Command::SmallData,
        Cmd::All => Command::All,
    };
    Ok(run_command(cmd, &config, &seeds, &out)?.len())
}
