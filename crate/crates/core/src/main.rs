use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fcf_bts::exec::Execution;
use fcf_bts::runner::{self, DatasetKind, ExperimentConfig, Strategy, DEFAULT_REDUCTIONS};

#[derive(Debug, Parser)]
#[command(version, about = "Federated collaborative filtering with bandit-selected payloads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment (all rebuilds) and write its trace and summary.
    Run {
        #[command(flatten)]
        opts: ConfigArgs,
        #[arg(long, short, default_value = "results")]
        out: PathBuf,
    },
    /// Run bts and random across reduction levels plus the full and toplist references.
    Sweep {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Comma-separated reduction levels.
        #[arg(long, value_delimiter = ',')]
        reductions: Option<Vec<f64>>,
        #[arg(long, short, default_value = "sweep")]
        out: PathBuf,
    },
    /// Compare strategies at one reduction level from saved summaries.
    Summarize {
        /// summary.json / sweep.json files or directories containing them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        reduction: f64,
        /// Also write the comparison as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Load a raw dataset, split it and write the split files and stats manifest.
    PrepareData {
        #[command(flatten)]
        opts: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config; flags below override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    data_path: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    #[arg(long)]
    reduction: Option<f64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    rebuilds: Option<usize>,
    #[arg(long)]
    theta: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulate clients on one thread.
    #[arg(long)]
    sequential: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<(ExperimentConfig, Execution)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.dataset {
            cfg.dataset = v;
        }
        if let Some(v) = &self.data_path {
            cfg.data_path = Some(v.clone());
        }
        if let Some(v) = self.strategy {
            cfg.strategy = v;
        }
        if let Some(v) = self.reduction {
            cfg.reduction = v;
        }
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.rebuilds {
            cfg.rebuilds = v;
        }
        if let Some(v) = self.theta {
            cfg.theta = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        cfg.validate()?;
        let mode = if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        Ok((cfg, mode))
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { opts, out } => {
            let (cfg, mode) = opts.resolve()?;
            let result = runner::run_experiment(&cfg, mode)?;
            runner::write_artifacts(&result, &out).with_context(|| format!("writing {}", out.display()))?;
            let s = &result.summary;
            println!(
                "{} {} reduction {}: precision {:.4} recall {:.4} f1 {:.4} map {:.4}",
                s.config.dataset.name(),
                s.strategy().name(),
                s.reduction(),
                s.mean.precision,
                s.mean.recall,
                s.mean.f1,
                s.mean.map
            );
        }
        Command::Sweep { opts, reductions, out } => {
            let (cfg, mode) = opts.resolve()?;
            let reductions = reductions.unwrap_or_else(|| DEFAULT_REDUCTIONS.to_vec());
            let sweep = runner::run_sweep(&cfg, &reductions, Some(&out), mode)?;
            println!("{} experiments written to {}", sweep.experiments.len(), out.display());
        }
        Command::Summarize { inputs, reduction, json } => {
            let summaries = runner::collect_summaries(&inputs)?;
            let cmp = runner::summarize(&summaries, reduction);
            print!("{}", cmp.render());
            if let Some(path) = json {
                std::fs::write(&path, serde_json::to_string_pretty(&cmp)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::PrepareData { opts, out } => {
            let (cfg, _) = opts.resolve()?;
            let prepared = runner::prepare_data(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&prepared)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
