use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use funs::data::{generate_synthetic, write_csv_dataset, SyntheticConfig};
use funs::experiment::{
    describe_plan, read_results, render_summary, run_experiment, summarize, write_summary_csv, ExperimentConfig,
    ModelKind,
};

#[derive(Parser)]
#[command(name = "funs", version, about = "Forecasting unobserved nodes in sensor graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV files.
    Generate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Generator settings (TOML); flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run a sweep and write one result row per model and cell.
    Run {
        /// Sweep definition (TOML). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Results CSV.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        shares: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        /// Comma-separated roster, e.g. funs_n,knn,mean.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Per-run wall-clock limit in seconds.
        #[arg(long)]
        budget: Option<f64>,
        /// Fill the wall_ms column.
        #[arg(long)]
        wall_time: bool,
        /// Print the cell plan and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Aggregate a results file over seeds.
    Summarize {
        results: PathBuf,
        /// Also write the summary as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &PathBuf) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Generate {
            out,
            config,
            seed,
            nodes,
            steps,
        } => {
            let mut cfg: SyntheticConfig = match &config {
                Some(p) => read_toml(p)?,
                None => SyntheticConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = nodes {
                cfg.n_nodes = n;
            }
            if let Some(t) = steps {
                cfg.steps = t;
            }
            let bundle = generate_synthetic(&cfg)?;
            write_csv_dataset(&bundle, &out)?;
            println!(
                "wrote {} nodes x {} steps x {} features to {}",
                bundle.graph.n(),
                bundle.features.steps(),
                bundle.features.d(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            output,
            shares,
            seeds,
            horizons,
            models,
            epochs,
            jobs,
            budget,
            wall_time,
            dry_run,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    ExperimentConfig::from_toml(&text)?
                }
                None => ExperimentConfig::default(),
            };
            if output.is_some() {
                cfg.output = output;
            }
            if let Some(v) = shares {
                cfg.shares = v;
            }
            if let Some(v) = seeds {
                cfg.seeds = v;
            }
            if let Some(v) = horizons {
                cfg.horizons = v;
            }
            if let Some(v) = models {
                cfg.models = v.iter().map(|m| ModelKind::parse(m.trim())).collect::<Result<_, _>>()?;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            if budget.is_some() {
                cfg.train.time_budget_secs = budget;
            }
            cfg.record_wall_time |= wall_time;
            cfg.validate()?;
            if dry_run {
                print!("{}", describe_plan(&cfg));
                return Ok(ExitCode::SUCCESS);
            }
            if cfg.output.is_none() {
                bail!("no output path: pass --output or set `output` in the config");
            }
            let result = run_experiment(&cfg)?;
            print!("{}", render_summary(&summarize(&result.rows)));
            if result.all_succeeded() {
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &result.failures {
                    eprintln!("failed: {f}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Summarize { results, csv } => {
            let rows = read_results(&results)?;
            let summary = summarize(&rows);
            print!("{}", render_summary(&summary));
            if let Some(path) = csv {
                write_summary_csv(&summary, &path)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
