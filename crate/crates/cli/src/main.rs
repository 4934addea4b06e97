//! `forge`: command-line driver for the synthetic trace pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Run;
use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "forge", version, about = "Private synthetic glucose traces guided by motif causality")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; defaults to `forge-out` next to the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the motif set from the causality split.
    Motifs(Common),
    /// Train per-partition causality matrices and aggregate them.
    TrainCausality(Common),
    /// Train the GAN and write a checkpoint plus loss log.
    TrainGan(Common),
    /// Sample synthetic traces from the checkpoint.
    Generate(Common),
    /// Compare synthetic traces against the real GAN split.
    Evaluate(Common),
}

fn init_threads() {
    if let Some(n) = std::env::var("FORGE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // only fails if a pool already exists, which cannot happen here
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run(cli: Cli) -> forge_core::Result<()> {
    let (Command::Motifs(c)
    | Command::TrainCausality(c)
    | Command::TrainGan(c)
    | Command::Generate(c)
    | Command::Evaluate(c)) = &cli.command;
    let cfg = PipelineConfig::load(&c.config, c.seed)?;
    let run = Run::new(cfg, commands::out_dir(c.out.as_deref(), &c.config))?;
    match cli.command {
        Command::Motifs(_) => {
            let ms = commands::motifs(&run)?;
            eprintln!("{} motifs written to {}", ms.len(), run.out.display());
        }
        Command::TrainCausality(_) => {
            let m = commands::train_causality(&run)?;
            eprintln!("{0}x{0} causality matrix written to {1}", m.m(), run.out.display());
        }
        Command::TrainGan(_) => {
            let ck = commands::train_gan(&run)?;
            eprintln!("checkpoint after {} epochs written to {}", ck.state.epoch, run.out.display());
        }
        Command::Generate(_) => {
            let s = commands::generate(&run)?;
            eprintln!("{} synthetic traces written to {}", s.len(), run.out.display());
        }
        Command::Evaluate(_) => {
            let r = commands::evaluate(&run)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
