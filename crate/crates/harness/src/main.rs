use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use nt_core::objectives::Mode;
use nt_harness::config::{load_config, ExperimentConfig};
use nt_harness::runner;

#[derive(Parser)]
#[command(name = "nt", about = "Neighbor-transfer experiments on synthetic and precomputed data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    /// Worker threads for independent runs; 1 keeps everything sequential.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset.
    Gen(Common),
    /// Train; writes checkpoints and history.
    Train(Common),
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Generate or load, train, evaluate and write all artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lambda values; one run per value.
        #[arg(long, value_delimiter = ',')]
        sweep_lambda: Option<Vec<f64>>,
    },
    /// Run every mode and write a comparison table.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated modes; defaults to all five.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<Mode>>,
    },
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.mode {
        cfg.objective.mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NT_LOG", "info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Gen(c) => {
            let path = runner::generate(&resolve(&c)?, &c.out)?;
            println!("{}", path.display());
        }
        Command::Train(c) => {
            let h = runner::train_only(&resolve(&c)?, &c.out)?;
            println!("best {} = {} at step {}", h.metric, h.best_metric, h.best_step);
        }
        Command::Eval {
            common,
            checkpoint,
            dataset,
        } => {
            let r = runner::eval_checkpoint(&resolve(&common)?, &checkpoint, &dataset, &common.out)?;
            println!("{}", r.to_json()?);
        }
        Command::Run {
            common,
            sweep_lambda,
        } => {
            let cfg = resolve(&common)?;
            match sweep_lambda {
                Some(ls) => {
                    let reports = runner::sweep_lambda(&cfg, &ls, &common.out, common.threads)?;
                    for (l, r) in ls.iter().zip(&reports) {
                        println!("lambda {l}: {:?}", r.metrics);
                    }
                }
                None => {
                    let out = runner::run_experiment(&cfg, &common.out)
                        .with_context(|| format!("run failed; see {}", common.out.display()))?;
                    println!("{}", out.report.to_json()?);
                }
            }
        }
        Command::Compare { common, modes } => {
            let cfg = resolve(&common)?;
            let modes = modes.unwrap_or_else(|| Mode::ALL.to_vec());
            let reports = runner::compare_modes(&cfg, &modes, &common.out, common.threads)?;
            print!("{}", runner::comparison_table(&modes, &reports));
        }
    }
    Ok(())
}
