use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::{Experiment, RoundRecord};
use super::svg::{self, Series};
use super::HarnessError;

/// Mean and standard error (sample sd / √n; 0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOffsets {
    pub arm: usize,
    pub rounds: usize,
    /// Mean proposed offset per mutable feature, in column order.
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub runs: usize,
    pub horizon: usize,
    pub final_cum_regret: Stat,
    pub total_queries: Stat,
    pub mean_reward: Stat,
    pub recourse_offsets: Vec<ArmOffsets>,
    /// Mean over runs of the per-arm coverage of realized mutable blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub features: Vec<String>,
    pub policies: Vec<PolicySummary>,
}

impl Summary {
    pub fn policy(&self, name: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.policy == name)
    }
}

/// Policies in order of first appearance.
fn policy_order(records: &[RoundRecord]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in records {
        if !names.contains(&r.policy) {
            names.push(r.policy.clone());
        }
    }
    names
}

/// Group by policy and summarize over runs.
pub fn aggregate(records: &[RoundRecord], features: &[String]) -> Result<Summary, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    let mut policies = Vec::new();
    for name in policy_order(records) {
        // run → (last t, cum regret at last t, queries, reward sum, rounds)
        let mut per_run: BTreeMap<usize, (usize, f64, f64, f64, usize)> = BTreeMap::new();
        let mut offsets: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
        let mut horizon = 0;
        for r in records.iter().filter(|r| r.policy == name) {
            let e = per_run.entry(r.run).or_insert((0, 0.0, 0.0, 0.0, 0));
            if e.4 == 0 || r.t >= e.0 {
                e.0 = r.t;
                e.1 = r.cum_regret;
            }
            e.2 += f64::from(u8::from(r.queried_advisor));
            e.3 += r.reward;
            e.4 += 1;
            horizon = horizon.max(r.t + 1);
            let o = offsets.entry(r.arm).or_insert_with(|| (0, vec![0.0; r.offsets.len()]));
            o.0 += 1;
            for (acc, v) in o.1.iter_mut().zip(&r.offsets) {
                *acc += v;
            }
        }
        let col = |f: fn(&(usize, f64, f64, f64, usize)) -> f64| per_run.values().map(f).collect::<Vec<_>>();
        policies.push(PolicySummary {
            policy: name,
            runs: per_run.len(),
            horizon,
            final_cum_regret: Stat::of(&col(|e| e.1)),
            total_queries: Stat::of(&col(|e| e.2)),
            mean_reward: Stat::of(&col(|e| e.3 / e.4 as f64)),
            recourse_offsets: offsets
                .into_iter()
                .map(|(arm, (n, sum))| ArmOffsets {
                    arm,
                    rounds: n,
                    mean: sum.into_iter().map(|s| s / n as f64).collect(),
                })
                .collect(),
            coverage: None,
        });
    }
    Ok(Summary {
        features: features.to_vec(),
        policies,
    })
}

/// [`aggregate`] plus the per-arm coverage diagnostic.
pub fn summarize(exp: &Experiment) -> Result<Summary, HarnessError> {
    let mut summary = aggregate(&exp.records(), &exp.feature_names)?;
    for (i, name) in exp.policy_names.iter().enumerate() {
        let cells: Vec<_> = exp.cells.iter().filter(|c| c.policy_index == i).collect();
        let arms = cells.iter().map(|c| c.coverage.len()).max().unwrap_or(0);
        let cov = (0..arms)
            .map(|a| {
                let vals: Vec<f64> = cells.iter().filter_map(|c| c.coverage.get(a).copied().flatten()).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        if let Some(p) = summary.policies.iter_mut().find(|p| &p.policy == name) {
            p.coverage = Some(cov);
        }
    }
    Ok(summary)
}

/// Mean ± stderr over runs of a per-round series, one entry per round.
pub fn series(records: &[RoundRecord], policy: &str, value: impl Fn(&RoundRecord) -> f64) -> Vec<Stat> {
    let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.policy == policy) {
        by_t.entry(r.t).or_default().push(value(r));
    }
    by_t.values().map(|v| Stat::of(v)).collect()
}

/// Cumulative advisor queries per round, mean ± stderr over runs.
pub fn query_series(records: &[RoundRecord], policy: &str) -> Vec<Stat> {
    let mut per_run: BTreeMap<usize, Vec<(usize, bool)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.policy == policy) {
        per_run.entry(r.run).or_default().push((r.t, r.queried_advisor));
    }
    let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for rounds in per_run.values_mut() {
        rounds.sort_unstable();
        let mut c = 0.0;
        for &(t, q) in rounds.iter() {
            c += f64::from(u8::from(q));
            by_t.entry(t).or_default().push(c);
        }
    }
    by_t.values().map(|v| Stat::of(v)).collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub const CSV_PREFIX: [&str; 8] = [
    "run",
    "t",
    "policy",
    "arm",
    "queried_advisor",
    "reward",
    "instant_regret",
    "cum_regret",
];

pub fn write_rounds_csv(records: &[RoundRecord], features: &[String], path: &Path) -> Result<(), HarnessError> {
    let csv_err = |e: csv::Error| HarnessError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = CSV_PREFIX
        .iter()
        .map(|s| s.to_string())
        .chain(features.iter().map(|f| format!("recourse_{f}")))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.run.to_string(),
            r.t.to_string(),
            r.policy.clone(),
            r.arm.to_string(),
            u8::from(r.queried_advisor).to_string(),
            r.reward.to_string(),
            r.instant_regret.to_string(),
            r.cum_regret.to_string(),
        ];
        row.extend(r.offsets.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Read a `rounds.csv` back; returns the records and the feature names.
pub fn read_rounds_csv(path: &Path) -> Result<(Vec<RoundRecord>, Vec<String>), HarnessError> {
    let bad = |reason: String| HarnessError::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < CSV_PREFIX.len() || header.iter().zip(CSV_PREFIX).any(|(h, e)| h != e) {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let features: Vec<String> = header
        .iter()
        .skip(CSV_PREFIX.len())
        .map(|h| h.strip_prefix("recourse_").unwrap_or(h).to_string())
        .collect();
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let f = |j: usize| -> Result<f64, HarnessError> {
            rec.get(j)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("line {line}: bad value in column {}", j + 1)))
        };
        let u = |j: usize| -> Result<usize, HarnessError> {
            rec.get(j)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| bad(format!("line {line}: bad integer in column {}", j + 1)))
        };
        records.push(RoundRecord {
            run: u(0)?,
            t: u(1)?,
            policy: rec.get(2).unwrap_or_default().to_string(),
            arm: u(3)?,
            queried_advisor: u(4)? != 0,
            reward: f(5)?,
            instant_regret: f(6)?,
            cum_regret: f(7)?,
            offsets: (CSV_PREFIX.len()..header.len()).map(f).collect::<Result<_, _>>()?,
        });
    }
    Ok((records, features))
}

/// Write `rounds.csv`, `summary.json`, `regret.svg` and `queries.svg`.
pub fn emit(records: &[RoundRecord], summary: &Summary, outdir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(outdir).map_err(io_err(outdir))?;
    write_rounds_csv(records, &summary.features, &outdir.join("rounds.csv"))?;
    let json_path = outdir.join("summary.json");
    let json = serde_json::to_string_pretty(summary).map_err(|e| HarnessError::Parse {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&json_path, json + "\n").map_err(io_err(&json_path))?;
    let names = policy_order(records);
    let regret: Vec<Series> = names
        .iter()
        .map(|n| Series {
            name: n.clone(),
            points: series(records, n, |r| r.cum_regret),
        })
        .collect();
    let queries: Vec<Series> = names
        .iter()
        .map(|n| Series {
            name: n.clone(),
            points: query_series(records, n),
        })
        .collect();
    for (file, title, y, data) in [
        ("regret.svg", "Cumulative regret", "regret", &regret),
        ("queries.svg", "Advisor queries", "queries", &queries),
    ] {
        let path = outdir.join(file);
        fs::write(&path, svg::line_chart(title, "round", y, data)).map_err(io_err(&path))?;
    }
    Ok(())
}
