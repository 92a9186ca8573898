use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environments::{coverage, Environment, LinkKind};
use crate::geometry::Vector;
use crate::glm::LinkFn;
use crate::policies::{Policy, Setup};

use super::config::ExperimentConfig;
use super::HarnessError;

/// One logged round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub run: usize,
    pub t: usize,
    pub policy: String,
    pub arm: usize,
    pub queried_advisor: bool,
    pub reward: f64,
    pub instant_regret: f64,
    pub cum_regret: f64,
    /// Proposed recourse minus the original mutable block.
    pub offsets: Vec<f64>,
}

/// Everything one (run, policy) cell produced.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub run: usize,
    pub policy_index: usize,
    pub records: Vec<RoundRecord>,
    /// Per arm, [`coverage`] of the realized mutable blocks.
    pub coverage: Vec<Option<f64>>,
    pub advisor_failures: usize,
    /// SHA-256 over the context stream, for cross-policy checks.
    pub context_digest: String,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    /// Sorted by policy (config order), run, then round.
    pub cells: Vec<CellOutput>,
    pub policy_names: Vec<String>,
    pub feature_names: Vec<String>,
}

impl Experiment {
    pub fn records(&self) -> Vec<RoundRecord> {
        self.cells.iter().flat_map(|c| c.records.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; the global pool when `None`.
    pub workers: Option<usize>,
    /// Overrides every HTTP advisor's cache directory.
    pub advisor_cache: Option<PathBuf>,
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Stream {
    Context = 1,
    Theta = 2,
    Solver = 3,
    Advisor = 4,
    Noise = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for `stream` of `(run, slot)`; slot 0 is shared by all policies.
fn seed(base: u64, run: usize, slot: usize, stream: Stream) -> u64 {
    let mut h = splitmix(base);
    for part in [run as u64, slot as u64, stream as u64] {
        h = splitmix(h ^ part);
    }
    h
}

fn rng(base: u64, run: usize, slot: usize, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed(base, run, slot, stream))
}

/// Environment of run `run`; arm parameters come from the run's theta stream.
pub fn build_environment(cfg: &ExperimentConfig, run: usize) -> Result<Environment, HarnessError> {
    // Only the link family matters for the true means.
    let link = match cfg.env.link {
        LinkKind::Identity => LinkFn::Identity,
        LinkKind::Logistic => LinkFn::Logistic { c_mu: 1.0 },
    };
    Ok(Environment::new(
        &cfg.env,
        link,
        cfg.norm.clone(),
        cfg.gamma,
        &mut rng(cfg.base_seed, run, 0, Stream::Theta),
    )?)
}

fn run_cell(
    cfg: &ExperimentConfig,
    env: &Environment,
    run: usize,
    policy_index: usize,
    opts: &RunOptions,
) -> Result<CellOutput, HarnessError> {
    let spec = &cfg.policies[policy_index];
    let (glm, link) = cfg.resolve_glm(env);
    let setup = Setup {
        arms: env.arms(),
        dim_immutable: env.dim_immutable(),
        dim_mutable: env.dim_mutable(),
        glm,
        link,
        norm: cfg.norm.clone(),
        gamma: cfg.gamma,
        compliance: env.compliance(),
        solver: cfg.solver,
    };
    let advisor = match spec.advisor() {
        Some(a) => Some(a.build(&env.truth(), opts.advisor_cache.as_ref())?),
        None => None,
    };
    let mut policy = Policy::new(spec, setup, advisor)?;
    let slot = policy_index + 1;
    let mut ctx_rng = rng(cfg.base_seed, run, 0, Stream::Context);
    let mut solver_rng = rng(cfg.base_seed, run, slot, Stream::Solver);
    let mut advisor_rng = rng(cfg.base_seed, run, slot, Stream::Advisor);
    let mut noise_rng = rng(cfg.base_seed, run, slot, Stream::Noise);
    let mut digest = Sha256::new();
    let mut realized_by_arm: Vec<Vec<Vector>> = vec![Vec::new(); env.arms()];
    let mut records = Vec::with_capacity(cfg.horizon);
    let mut cum = 0.0;
    for t in 0..cfg.horizon {
        let x = env.sample_context(&mut ctx_rng);
        for v in x.immutable.iter().chain(x.mutable.iter()) {
            digest.update(v.to_bits().to_le_bytes());
        }
        let d = policy.decide(&x, &mut solver_rng, &mut advisor_rng)?;
        let out = env.realize(d.arm, &d.recourse, &x, &mut noise_rng)?;
        let regret = env.regret_of(&x, d.arm, &d.recourse)?;
        policy.observe(&d, &out.realized, out.reward - env.reward_offset())?;
        realized_by_arm[d.arm].push(out.realized.mutable.clone());
        cum += regret;
        records.push(RoundRecord {
            run,
            t,
            policy: policy.name().to_string(),
            arm: d.arm,
            queried_advisor: d.queried_advisor,
            reward: out.reward,
            instant_regret: regret,
            cum_regret: cum,
            offsets: (&d.recourse - &x.mutable).iter().copied().collect(),
        });
    }
    Ok(CellOutput {
        run,
        policy_index,
        records,
        coverage: realized_by_arm.iter().map(|r| coverage(r)).collect(),
        advisor_failures: policy.advisor_failures(),
        context_digest: hex::encode(digest.finalize()),
    })
}

fn run_all(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Experiment, HarnessError> {
    let envs = (0..cfg.runs)
        .into_par_iter()
        .map(|run| build_environment(cfg, run))
        .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<(usize, usize)> = (0..cfg.policies.len())
        .flat_map(|p| (0..cfg.runs).map(move |r| (p, r)))
        .collect();
    let mut outputs = cells
        .into_par_iter()
        .map(|(p, r)| run_cell(cfg, &envs[r], r, p, opts))
        .collect::<Result<Vec<_>, _>>()?;
    outputs.sort_by_key(|c| (c.policy_index, c.run));
    let failures: usize = outputs.iter().map(|c| c.advisor_failures).sum();
    if failures > 0 {
        log::warn!("{failures} advisor failure(s) fell back to the bandit pair");
    }
    let d_m = envs.first().map_or(0, Environment::dim_mutable);
    let feature_names = envs
        .first()
        .and_then(Environment::feature_names)
        .map(|n| n[n.len() - d_m..].to_vec())
        .unwrap_or_else(|| (0..d_m).map(|i| i.to_string()).collect());
    Ok(Experiment {
        cells: outputs,
        policy_names: cfg.policies.iter().map(|p| p.label()).collect(),
        feature_names,
    })
}

/// Validate, then run every (run, policy) cell. Within a run all policies
/// see the same environment and context stream; each policy has its own
/// solver, advisor and noise streams.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Experiment, HarnessError> {
    cfg.validate()?;
    log::info!(
        "{} run(s) x {} policies, T = {}, radius_scale = {}, lambda = {}",
        cfg.runs,
        cfg.policies.len(),
        cfg.horizon,
        cfg.glm.radius_scale,
        cfg.glm.lambda
    );
    match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HarnessError::Config(vec![format!("worker pool: {e}")]))?
            .install(|| run_all(cfg, opts)),
        None => run_all(cfg, opts),
    }
}
