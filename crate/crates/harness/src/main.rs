use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use holdlab_harness::commands::{cmd_eval, cmd_plot, cmd_train, cmd_transfer};
use holdlab_harness::error::{HarnessError, Result};
use holdlab_harness::experiment::{ExperimentConfig, PolicyKind};

#[derive(Parser)]
#[command(name = "holdlab", version, about = "Bus holding control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned policy on the first route.
    Train(Common),
    /// Evaluate policies against no control on the first route.
    Eval(Common),
    /// Evaluate policies on every listed route without retraining.
    Transfer(Common),
    /// Draw bus trajectories of one evaluation episode as SVG.
    Plot(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Route preset names or route TOML paths, comma separated.
    #[arg(long, value_delimiter = ',')]
    route: Vec<String>,
    /// nc, fh, iac, maddpg or caac; comma separated for eval and transfer.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Seeds, comma separated. Training seeds for train, evaluation seeds otherwise.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Checkpoint to write (train) or read (other commands), comma separated
    /// in the order of the learned policies.
    #[arg(long, value_delimiter = ',')]
    checkpoint: Vec<PathBuf>,
    /// Output directory, or the SVG file for plot.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use desk-scale route presets (true or false).
    #[arg(long)]
    desk_scale: Option<bool>,
    /// Keep raw episode logs next to the metrics table.
    #[arg(long)]
    logs: bool,
}

impl Common {
    fn config(&self, training: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if !self.route.is_empty() {
            cfg.routes = self.route.clone();
        }
        if let Some(p) = self.policy.first() {
            cfg.policy = p.parse()?;
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        if !self.seeds.is_empty() {
            if training {
                cfg.seeds = self.seeds.clone();
            } else {
                cfg.eval_seeds = self.seeds.clone();
            }
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(d) = self.desk_scale {
            cfg.desk_scale = d;
        }
        if training {
            cfg.checkpoint = self.checkpoint.first().cloned();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn policies(&self, cfg: &ExperimentConfig) -> Result<Vec<PolicyKind>> {
        if self.policy.is_empty() {
            return Ok(vec![cfg.policy]);
        }
        self.policy.iter().map(|p| p.parse()).collect()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.config(true)?;
            for dir in cmd_train(&cfg)? {
                println!("{}", dir.display());
            }
        }
        Command::Eval(c) => {
            let cfg = c.config(false)?;
            let (path, _) = cmd_eval(&cfg, &c.policies(&cfg)?, &c.checkpoint, c.logs)?;
            println!("{}", path.display());
        }
        Command::Transfer(c) => {
            let cfg = c.config(false)?;
            let (path, _) = cmd_transfer(&cfg, &c.policies(&cfg)?, &c.checkpoint, c.logs)?;
            println!("{}", path.display());
        }
        Command::Plot(c) => {
            let cfg = c.config(false)?;
            let out = c
                .out
                .clone()
                .ok_or_else(|| HarnessError::Config("plot needs --out <file.svg>".into()))?;
            let seed = cfg.eval_seeds.first().copied().unwrap_or(0);
            let gap = cmd_plot(
                &cfg,
                cfg.policy,
                c.checkpoint.first().map(PathBuf::as_path),
                seed,
                &out,
            )?;
            match gap {
                Some(g) => println!("{} (min arrival gap {g:.1} s)", out.display()),
                None => println!("{}", out.display()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
