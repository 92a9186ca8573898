//! Experiment orchestration: config, replicated runs, aggregation, sweeps
//! and file output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::advisors::AdvisorError;
use crate::environments::EnvError;
use crate::policies::PolicyError;

pub mod config;
pub mod report;
pub mod runner;
pub mod svg;

pub use config::{ExperimentConfig, GlmSection, SweepParam};
pub use report::{aggregate, emit, read_rounds_csv, summarize, PolicySummary, Stat, Summary};
pub use runner::{build_environment, run_experiment, CellOutput, Experiment, RoundRecord, RunOptions};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("unknown sweep parameter {0:?} (expected delta, q, epsilon or gamma)")]
    UnknownParam(String),

    #[error("sweep needs at least one value")]
    EmptyValues,

    #[error("no records to aggregate")]
    EmptyRecords,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Policy(#[from] PolicyError),

    #[error(transparent)]
    Advisor(#[from] AdvisorError),
}

/// Run and aggregate once per value of `param`. With an output directory
/// each value's files go to `<dir>/<param>=<value>/` and a combined
/// `sweep.csv` is written to `<dir>`.
pub fn sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    opts: &RunOptions,
    outdir: Option<&Path>,
) -> Result<Vec<(f64, Summary)>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::EmptyValues);
    }
    let configs = values
        .iter()
        .map(|&v| param.apply(cfg, v))
        .collect::<Result<Vec<_>, _>>()?;
    for c in &configs {
        c.validate()?;
    }
    let mut out = Vec::with_capacity(values.len());
    for (&value, c) in values.iter().zip(&configs) {
        log::info!("sweep {}={value}", param.name());
        let exp = run_experiment(c, opts)?;
        let summary = summarize(&exp)?;
        if let Some(dir) = outdir {
            emit(&exp.records(), &summary, &dir.join(format!("{}={value}", param.name())))?;
        }
        out.push((value, summary));
    }
    if let Some(dir) = outdir {
        let path = dir.join("sweep.csv");
        std::fs::write(&path, sweep_csv(param, &out)).map_err(|source| HarnessError::Io { path, source })?;
    }
    Ok(out)
}

pub fn sweep_csv(param: SweepParam, results: &[(f64, Summary)]) -> String {
    let mut s = format!(
        "{},policy,final_cum_regret_mean,final_cum_regret_stderr,total_queries_mean,total_queries_stderr,mean_reward_mean,mean_reward_stderr\n",
        param.name()
    );
    for (v, summary) in results {
        for p in &summary.policies {
            let _ = writeln!(
                s,
                "{v},{},{},{},{},{},{},{}",
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
    s
}

/// Re-aggregate `<dir>/rounds.csv` and rewrite the summary and plots.
/// Coverage is not recoverable from the CSV, so it is carried over from an
/// existing `summary.json` when one is readable.
pub fn report(dir: &Path) -> Result<Summary, HarnessError> {
    let (records, features) = read_rounds_csv(&dir.join("rounds.csv"))?;
    let mut summary = aggregate(&records, &features)?;
    let previous = std::fs::read_to_string(dir.join("summary.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<Summary>(&s).ok());
    if let Some(prev) = previous {
        for p in &mut summary.policies {
            if let Some(old) = prev.policy(&p.policy) {
                p.coverage.clone_from(&old.coverage);
            }
        }
    }
    emit(&records, &summary, dir)?;
    Ok(summary)
}
