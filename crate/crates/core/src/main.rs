use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latcon::pipeline::{ExperimentConfig, Pipeline, Task};
use latcon::{Error, Result};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "latcon", version, about = "Latent constraints on pretrained VAEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; its fields override the flags below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    mnist_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    limit: Option<usize>,
    #[arg(long, global = true)]
    holdout: Option<usize>,
    /// Use the small fixture-scale preset as the base config.
    #[arg(long, global = true)]
    smoke: bool,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    TrainVae,
    ElboSweep,
    TrainRealism,
    Contour,
    TrainCgan,
    TrainAttrCritic,
    Sample,
    Transform,
    GenCorpus,
    TrainSeqvae,
    ZeroShot,
    Evaluate,
    /// Every task in order.
    Reproduce,
    /// Print the effective config as JSON.
    ShowConfig,
}

impl Command {
    fn task(self) -> Option<Task> {
        Some(match self {
            Command::TrainVae => Task::TrainVae,
            Command::ElboSweep => Task::ElboSweep,
            Command::TrainRealism => Task::TrainRealism,
            Command::Contour => Task::Contour,
            Command::TrainCgan => Task::TrainCgan,
            Command::TrainAttrCritic => Task::TrainAttrCritic,
            Command::Sample => Task::Sample,
            Command::Transform => Task::Transform,
            Command::GenCorpus => Task::GenCorpus,
            Command::TrainSeqvae => Task::TrainSeqvae,
            Command::ZeroShot => Task::ZeroShot,
            Command::Evaluate => Task::Evaluate,
            Command::Reproduce | Command::ShowConfig => return None,
        })
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if cli.smoke {
        cfg = ExperimentConfig::smoke("data/mnist/fixture", "out-smoke");
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = &cli.mnist_dir {
        cfg.mnist_dir = p.clone();
    }
    if let Some(p) = &cli.out_dir {
        cfg.out_dir = p.clone();
    }
    if cli.limit.is_some() {
        cfg.limit = cli.limit;
    }
    if let Some(h) = cli.holdout {
        cfg.holdout = h;
    }
    let Some(path) = &cli.config else {
        return Ok(cfg);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut v = serde_json::to_value(&cfg)?;
    merge(&mut v, file);
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let mut p = Pipeline::new(cfg)?;
    p.quiet = cli.quiet;
    match cli.command.task() {
        Some(t) => p.run(t)?,
        None => p.run_all()?,
    };
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
