use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};
use recourse_bandit::harness::{self, ExperimentConfig, RunOptions, SweepParam};

#[derive(Parser)]
#[command(name = "recourse-bandit", version, about = "Run recourse bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv, summary.json and plots.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Cache directory for HTTP advisor responses.
        #[arg(long)]
        advisor_cache: Option<PathBuf>,
    },
    /// Repeat an experiment over values of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of delta, q, epsilon, gamma.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        advisor_cache: Option<PathBuf>,
    },
    /// Re-aggregate an existing rounds.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn output_dir(out: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    match out.or_else(|| cfg.output_dir.clone()) {
        Some(p) => Ok(p),
        None => bail!("no output directory: pass --out or set output_dir in the config"),
    }
}

fn print_summary(summary: &harness::Summary) {
    println!(
        "{:<16} {:>22} {:>18} {:>18}",
        "policy", "final regret", "queries", "mean reward"
    );
    for p in &summary.policies {
        println!(
            "{:<16} {:>12.3} ± {:<7.3} {:>9.1} ± {:<6.1} {:>9.3} ± {:<6.3}",
            p.policy,
            p.final_cum_regret.mean,
            p.final_cum_regret.stderr,
            p.total_queries.mean,
            p.total_queries.stderr,
            p.mean_reward.mean,
            p.mean_reward.stderr
        );
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            workers,
            advisor_cache,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let dir = output_dir(out, &cfg)?;
            let exp = harness::run_experiment(&cfg, &RunOptions { workers, advisor_cache })?;
            let summary = harness::summarize(&exp)?;
            harness::emit(&exp.records(), &summary, &dir)
                .with_context(|| format!("writing results to {}", dir.display()))?;
            print_summary(&summary);
            log::info!("wrote {}", dir.display());
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
            workers,
            advisor_cache,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let param: SweepParam = param.parse()?;
            let dir = out.or_else(|| cfg.output_dir.clone());
            let results = harness::sweep(&cfg, param, &values, &RunOptions { workers, advisor_cache }, dir.as_deref())?;
            for (v, s) in &results {
                println!("{}={v}", param.name());
                print_summary(s);
            }
        }
        Command::Report { input } => {
            let summary = harness::report(&input)?;
            print_summary(&summary);
        }
    }
    Ok(())
}
