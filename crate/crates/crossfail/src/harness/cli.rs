//! Thin command-line front end: parse, load config, dispatch.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::commands::{cmd_replay, run_command, Ctx};
use super::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "crossfail",
    about = "Failure sampling and robust planning for a four-way intersection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// east | west | south | north | all (overrides the config).
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo campaign under the prior noise model.
    Mc(Common),
    /// Train one diffusion teacher per scenario.
    Train(Common),
    /// Distill teachers into one-step students.
    Distill(Common),
    /// Sample from both models, with a timing report.
    Sample(Common),
    /// Density/coverage/failure-rate report against the MC failure set.
    Metrics(Common),
    /// Paired robust-planner vs IDM evaluation campaign.
    PlanEval(Common),
    /// Re-run a recorded command and verify byte-identical outputs.
    Replay {
        /// Directory holding the original outputs and resolved config.
        #[arg(long)]
        from: PathBuf,
        /// Which recorded command to replay.
        #[arg(long)]
        command: String,
        /// Fresh output directory for the replayed run.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<Ctx, super::HarnessError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &common.scenario {
        cfg.scenario = s.clone();
    }
    Ctx::new(cfg, common.out.clone())
}

pub fn cli_main() {
    let cli = Cli::parse();
    let result = (|| -> Result<(), super::HarnessError> {
        match &cli.command {
            Command::Mc(c) => run_command(&load(c)?, "mc"),
            Command::Train(c) => run_command(&load(c)?, "train"),
            Command::Distill(c) => run_command(&load(c)?, "distill"),
            Command::Sample(c) => run_command(&load(c)?, "sample"),
            Command::Metrics(c) => run_command(&load(c)?, "metrics"),
            Command::PlanEval(c) => run_command(&load(c)?, "plan-eval"),
            Command::Replay { from, command, out } => {
                let identical = cmd_replay(from, command, out)?;
                if identical {
                    println!("replay of {command:?} is byte-identical");
                    Ok(())
                } else {
                    Err(super::HarnessError::Pipeline(format!(
                        "replay of {command:?} produced different bytes"
                    )))
                }
            }
        }
    })();
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
