use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use drlroute::config::load_config;
use drlroute::experiment::{cmd_compare, cmd_eval, cmd_train, format_table, Overrides};

#[derive(Parser)]
#[command(name = "drlroute", version, about = "DDPG link-weight routing on a packet-level simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override steps per episode.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Override the number of training episodes.
    #[arg(long, global = true)]
    episodes: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics.csv, checkpoints and a manifest.
    Train { config: PathBuf },
    /// Evaluate a trained actor without exploration noise.
    Eval { config: PathBuf, checkpoint: PathBuf },
    /// Compare the trained actor against OSPF and random weights.
    Compare { config: PathBuf, checkpoint: PathBuf },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.common.seed,
        out_dir: cli.common.out,
        steps_per_episode: cli.common.steps,
        episodes: cli.common.episodes,
    };
    let load = |path: &PathBuf| -> Result<_> {
        let mut config =
            load_config(path).with_context(|| format!("loading {}", path.display()))?;
        overrides.apply(&mut config)?;
        Ok(config)
    };

    match &cli.command {
        Command::Train { config } => {
            let config = load(config)?;
            let outcome = cmd_train(&config).context("training failed")?;
            println!(
                "trained {} steps ({} updates); metrics in {}, checkpoint in {}",
                outcome.steps,
                outcome.updates,
                outcome.out_dir.join("metrics.csv").display(),
                outcome.checkpoint.display()
            );
        }
        Command::Eval { config, checkpoint } => {
            let config = load(config)?;
            let summary = cmd_eval(&config, checkpoint).context("evaluation failed")?;
            print!("{}", format_table(std::slice::from_ref(&summary)));
        }
        Command::Compare { config, checkpoint } => {
            let config = load(config)?;
            let summaries = cmd_compare(&config, checkpoint).context("comparison failed")?;
            print!("{}", format_table(&summaries));
            println!("wrote {}", config.run.out_dir.join("compare.csv").display());
        }
    }
    Ok(())
}
