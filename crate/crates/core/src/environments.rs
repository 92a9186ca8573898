//! Ground-truth simulators.
//!
//! An [`Environment`] holds the true arm parameters, samples contexts,
//! realizes a proposed recourse under a compliance mode and scores decisions
//! by expected-value regret.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::advisors::Truth;
use crate::context::{concat, split, Context};
use crate::geometry::{GeometryError, NormSpec, Vector};
use crate::glm::LinkFn;
use crate::solver::{oracle_recourse, BestPair, SolverError};

/// Perturbation draws used for expectations under random non-compliance
/// with a nonlinear link.
pub const QUADRATURE_DRAWS: usize = 256;
const QUADRATURE_SEED: u64 = 0x5eed_0256;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment: {0}")]
    Config(String),

    #[error("pool {path}: {reason}")]
    Pool { path: PathBuf, reason: String },

    #[error(transparent)]
    Geometry(#[from] GeometryError),

    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    #[default]
    Identity,
    Logistic,
}

/// How the implemented mutable block relates to the proposed recourse.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Compliance {
    #[default]
    Full,
    /// Proposed plus a perturbation uniform in the ε-ball.
    #[serde(alias = "random_bounded")]
    Random { epsilon: f64 },
    /// Proposed minus `ε·∂‖θ⋆_M‖_⋆` for the chosen arm.
    Adversarial { epsilon: f64 },
}

impl Compliance {
    pub fn epsilon(&self) -> f64 {
        match *self {
            Self::Full => 0.0,
            Self::Random { epsilon } | Self::Adversarial { epsilon } => epsilon,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    /// Standard normal contexts and standard normal arm parameters.
    SyntheticGaussian {
        d: usize,
        k: usize,
        /// Fixes the arm parameters across runs; otherwise each run draws its own.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_seed: Option<u64>,
        #[serde(default = "default_true")]
        all_mutable: bool,
        /// Trailing mutable coordinates when `all_mutable` is false.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d_mutable: Option<usize>,
    },
    /// Fixed linear outcome models, one coefficient row per arm in the
    /// original feature order.
    TableLinear {
        coefficients: Vec<Vec<f64>>,
        #[serde(default)]
        intercepts: Vec<f64>,
        mutable_indices: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feature_names: Option<Vec<String>>,
        /// When set, reward = offset − predicted outcome.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward_offset: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool_csv: Option<PathBuf>,
        /// Prepend a constant 1 to the immutable block so intercepts are learnable.
        #[serde(default)]
        bias_feature: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(flatten)]
    pub kind: EnvKind,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub compliance: Compliance,
    #[serde(default)]
    pub link: LinkKind,
}

pub const CASE_STUDY_FEATURES: [&str; 8] = [
    "female",
    "age",
    "cvd_hx_baseline",
    "race",
    "smoking",
    "DietScore",
    "PhyActHours",
    "Systolic Blood Pressure for this visit",
];

impl EnvSpec {
    /// Gaussian generator with `d` all-mutable features and `k` arms.
    pub fn gaussian(d: usize, k: usize, noise_sigma: f64) -> Self {
        Self {
            kind: EnvKind::SyntheticGaussian {
                d,
                k,
                theta_seed: None,
                all_mutable: true,
                d_mutable: None,
            },
            noise_sigma,
            compliance: Compliance::Full,
            link: LinkKind::Identity,
        }
    }

    /// Two-arm hypertension outcome models (next-visit blood pressure per
    /// standardized feature), reward `170 − outcome`.
    pub fn hypertension(noise_sigma: f64) -> Self {
        Self {
            kind: EnvKind::TableLinear {
                coefficients: vec![
                    vec![-0.51, 1.91, 0.29, -0.00, 1.43, -2.12, -0.48, 8.79],
                    vec![2.73, -1.51, 1.09, -0.00, -1.78, -2.18, -1.02, 10.82],
                ],
                intercepts: vec![0.0, 0.0],
                mutable_indices: vec![5, 6],
                feature_names: Some(CASE_STUDY_FEATURES.map(String::from).to_vec()),
                reward_offset: Some(170.0),
                pool_csv: None,
                bias_feature: false,
            },
            noise_sigma,
            compliance: Compliance::Full,
            link: LinkKind::Identity,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            errs.push(format!("env.noise_sigma must be finite and nonnegative, got {}", self.noise_sigma));
        }
        let eps = self.compliance.epsilon();
        if !(eps.is_finite() && eps >= 0.0) {
            errs.push(format!("env.compliance.epsilon must be finite and nonnegative, got {eps}"));
        }
        match &self.kind {
            EnvKind::SyntheticGaussian {
                d,
                k,
                all_mutable,
                d_mutable,
                ..
            } => {
                if *d == 0 {
                    errs.push("env.d must be positive".into());
                }
                if *k == 0 {
                    errs.push("env.k must be positive".into());
                }
                if !all_mutable && d_mutable.is_none_or(|m| m > *d) {
                    errs.push("env.d_mutable must be given and at most d when all_mutable is false".into());
                }
            }
            EnvKind::TableLinear {
                coefficients,
                intercepts,
                mutable_indices,
                feature_names,
                ..
            } => {
                if coefficients.is_empty() {
                    errs.push("env.coefficients must list at least one arm".into());
                }
                let d = coefficients.first().map_or(0, Vec::len);
                if coefficients.iter().any(|c| c.len() != d) {
                    errs.push("env.coefficients rows must share one length".into());
                }
                if coefficients.iter().flatten().any(|c| !c.is_finite()) {
                    errs.push("env.coefficients must be finite".into());
                }
                if !intercepts.is_empty() && intercepts.len() != coefficients.len() {
                    errs.push(format!(
                        "env.intercepts has {} entries for {} arms",
                        intercepts.len(),
                        coefficients.len()
                    ));
                }
                let mut seen = vec![false; d];
                for &i in mutable_indices {
                    if i >= d || std::mem::replace(&mut seen[i], true) {
                        errs.push(format!("env.mutable_indices entry {i} is out of range or repeated"));
                    }
                }
                if let Some(names) = feature_names {
                    if names.len() != d {
                        errs.push(format!("env.feature_names has {} names for {} coefficients", names.len(), d));
                    }
                }
            }
        }
        errs
    }
}

/// Result of implementing a decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub realized: Context,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct Environment {
    thetas: Vec<Vector>,
    bias: Vec<f64>,
    link: LinkFn,
    norm: NormSpec,
    gamma: f64,
    compliance: Compliance,
    noise_sigma: f64,
    offset: f64,
    d_i: usize,
    d_m: usize,
    /// Permutation from original feature order to `(x_I, x_M)` layout.
    layout: Option<Vec<usize>>,
    bias_feature: bool,
    pool: Option<Arc<Vec<Vector>>>,
    quadrature: Vec<Vector>,
    names: Option<Vec<String>>,
}

impl Environment {
    /// Build the environment. `theta_rng` drives the Gaussian arm parameters
    /// unless the spec fixes a seed.
    pub fn new<R: Rng + ?Sized>(
        spec: &EnvSpec,
        link: LinkFn,
        norm: NormSpec,
        gamma: f64,
        theta_rng: &mut R,
    ) -> Result<Self, EnvError> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(EnvError::Config(errs.join("; ")));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(EnvError::Config(format!("gamma must be finite and nonnegative, got {gamma}")));
        }
        let mut env = match &spec.kind {
            EnvKind::SyntheticGaussian {
                d,
                k,
                theta_seed,
                all_mutable,
                d_mutable,
            } => {
                let d_m = if *all_mutable { *d } else { d_mutable.unwrap_or(0) };
                let draw = |rng: &mut dyn rand::RngCore| -> Vec<Vector> {
                    (0..*k)
                        .map(|_| Vector::from_fn(*d, |_, _| rng.sample(StandardNormal)))
                        .collect()
                };
                let thetas = match theta_seed {
                    Some(s) => draw(&mut ChaCha8Rng::seed_from_u64(*s)),
                    None => {
                        let mut local = ChaCha8Rng::seed_from_u64(theta_rng.random());
                        draw(&mut local)
                    }
                };
                Self {
                    bias: vec![0.0; *k],
                    thetas,
                    link,
                    norm,
                    gamma,
                    compliance: spec.compliance,
                    noise_sigma: spec.noise_sigma,
                    offset: 0.0,
                    d_i: d - d_m,
                    d_m,
                    layout: None,
                    bias_feature: false,
                    pool: None,
                    quadrature: Vec::new(),
                    names: None,
                }
            }
            EnvKind::TableLinear {
                coefficients,
                intercepts,
                mutable_indices,
                feature_names,
                reward_offset,
                pool_csv,
                bias_feature,
            } => {
                let d = coefficients[0].len();
                let immutable: Vec<usize> = (0..d).filter(|i| !mutable_indices.contains(i)).collect();
                let layout: Vec<usize> = immutable.iter().chain(mutable_indices).copied().collect();
                let sign = if reward_offset.is_some() { -1.0 } else { 1.0 };
                let intercept = |a: usize| intercepts.get(a).copied().unwrap_or(0.0) * sign;
                let thetas = coefficients
                    .iter()
                    .enumerate()
                    .map(|(a, c)| {
                        let permuted = layout.iter().map(|&i| sign * c[i]);
                        if *bias_feature {
                            Vector::from_iterator(d + 1, std::iter::once(intercept(a)).chain(permuted))
                        } else {
                            Vector::from_iterator(d, permuted)
                        }
                    })
                    .collect();
                let bias = (0..coefficients.len())
                    .map(|a| if *bias_feature { 0.0 } else { intercept(a) })
                    .collect();
                let pool = match pool_csv {
                    Some(path) => Some(Arc::new(load_pool(path, feature_names.as_deref(), d)?)),
                    None => None,
                };
                Self {
                    thetas,
                    bias,
                    link,
                    norm,
                    gamma,
                    compliance: spec.compliance,
                    noise_sigma: spec.noise_sigma,
                    offset: reward_offset.unwrap_or(0.0),
                    d_i: immutable.len() + usize::from(*bias_feature),
                    d_m: mutable_indices.len(),
                    layout: Some(layout.clone()),
                    bias_feature: *bias_feature,
                    pool,
                    quadrature: Vec::new(),
                    names: feature_names
                        .as_ref()
                        .map(|n| layout.iter().map(|&i| n[i].clone()).collect()),
                }
            }
        };
        if let Some(nd) = env.norm.dim() {
            if nd != env.d_m {
                return Err(GeometryError::DimensionMismatch {
                    expected: env.d_m,
                    actual: nd,
                }
                .into());
            }
        }
        if let (Compliance::Random { epsilon }, LinkFn::Logistic { .. }) = (env.compliance, env.link) {
            let mut q = ChaCha8Rng::seed_from_u64(QUADRATURE_SEED);
            env.quadrature = (0..QUADRATURE_DRAWS)
                .map(|_| env.norm.sample_uniform_ball(env.d_m, epsilon, &mut q))
                .collect();
        }
        Ok(env)
    }

    pub fn arms(&self) -> usize {
        self.thetas.len()
    }

    pub fn dim(&self) -> usize {
        self.d_i + self.d_m
    }

    pub fn dim_immutable(&self) -> usize {
        self.d_i
    }

    pub fn dim_mutable(&self) -> usize {
        self.d_m
    }

    pub fn thetas(&self) -> &[Vector] {
        &self.thetas
    }

    pub fn link(&self) -> &LinkFn {
        &self.link
    }

    pub fn compliance(&self) -> Compliance {
        self.compliance
    }

    /// Constant added to every reward; the learner models reward minus this.
    pub fn reward_offset(&self) -> f64 {
        self.offset
    }

    /// Feature names in `(x_I, x_M)` layout, when known.
    pub fn feature_names(&self) -> Option<Vec<String>> {
        let names = self.names.clone()?;
        Some(if self.bias_feature {
            std::iter::once("bias".to_string()).chain(names).collect()
        } else {
            names
        })
    }

    /// True parameters for the synthetic advisors (intercepts outside the
    /// parameter vector are ignored; they do not change the best arm's recourse).
    pub fn truth(&self) -> Truth {
        Truth {
            thetas: self.thetas.clone(),
            link: self.link,
            gamma: self.gamma,
            norm: self.norm.clone(),
        }
    }

    fn arrange(&self, raw: &Vector) -> Context {
        let v = match &self.layout {
            Some(l) => Vector::from_iterator(l.len(), l.iter().map(|&i| raw[i])),
            None => raw.clone(),
        };
        let v = if self.bias_feature {
            concat(&Vector::from_element(1, 1.0), &v)
        } else {
            v
        };
        let (xi, xm) = split(&v, self.d_i);
        Context::new(xi, xm)
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> Context {
        let raw_dim = self.dim() - usize::from(self.bias_feature);
        let raw = match &self.pool {
            Some(rows) => rows[rng.random_range(0..rows.len())].clone(),
            None => Vector::from_fn(raw_dim, |_, _| rng.sample(StandardNormal)),
        };
        self.arrange(&raw)
    }

    /// 0.999 quantile of `‖x‖₂` for generated contexts, or the largest pool
    /// row norm.
    pub fn context_radius(&self) -> f64 {
        match &self.pool {
            Some(rows) => rows.iter().map(|r| r.norm()).fold(0.0, f64::max) + f64::from(u8::from(self.bias_feature)),
            None => chi_quantile(self.dim() - usize::from(self.bias_feature), 0.999) + f64::from(u8::from(self.bias_feature)),
        }
    }

    /// Bound on `‖θ⋆_a‖₂`: the 0.999 quantile under the Gaussian prior, or
    /// the largest configured parameter norm.
    pub fn parameter_radius(&self) -> f64 {
        match self.layout {
            None => chi_quantile(self.dim(), 0.999),
            Some(_) => self.thetas.iter().map(|t| t.norm()).fold(0.0, f64::max),
        }
    }

    fn index(&self, arm: usize, x_i: &Vector, x_m: &Vector) -> f64 {
        let (ti, tm) = split(&self.thetas[arm], self.d_i);
        self.bias[arm] + x_i.dot(&ti) + x_m.dot(&tm)
    }

    fn check(&self, arm: usize, x: &Context, recourse: &Vector) -> Result<(), EnvError> {
        if arm >= self.arms() {
            return Err(EnvError::Config(format!("arm {arm} out of range for {} arms", self.arms())));
        }
        if x.dim_immutable() != self.d_i || x.dim_mutable() != self.d_m || recourse.len() != self.d_m {
            return Err(SolverError::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim_immutable() + recourse.len(),
            }
            .into());
        }
        Ok(())
    }

    /// Implement `recourse` for `arm` and draw a noisy reward.
    pub fn realize<R: Rng + ?Sized>(
        &self,
        arm: usize,
        recourse: &Vector,
        x: &Context,
        rng: &mut R,
    ) -> Result<Outcome, EnvError> {
        self.check(arm, x, recourse)?;
        let realized_m = match self.compliance {
            Compliance::Full => recourse.clone(),
            Compliance::Random { epsilon } => recourse + self.norm.sample_uniform_ball(self.d_m, epsilon, rng),
            Compliance::Adversarial { epsilon } => {
                let (_, tm) = split(&self.thetas[arm], self.d_i);
                recourse - self.norm.dual_subgradient(&tm)? * epsilon
            }
        };
        let mean = self.link.mean(self.index(arm, &x.immutable, &realized_m));
        let noise = if self.noise_sigma > 0.0 {
            self.noise_sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        Ok(Outcome {
            realized: x.with_mutable(realized_m),
            reward: self.offset + mean + noise,
        })
    }

    /// Noise-free reward of playing `(arm, recourse)` under the compliance
    /// semantics: exact for full compliance, the expectation over the
    /// perturbation for random, and the worst case for adversarial.
    pub fn expected_reward(&self, arm: usize, x: &Context, recourse: &Vector) -> Result<f64, EnvError> {
        self.check(arm, x, recourse)?;
        let base = self.index(arm, &x.immutable, recourse);
        let (_, tm) = split(&self.thetas[arm], self.d_i);
        let mean = match (self.compliance, &self.link) {
            (Compliance::Full, _) | (Compliance::Random { .. }, LinkFn::Identity) => self.link.mean(base),
            (Compliance::Random { .. }, _) => {
                self.quadrature.iter().map(|e| self.link.mean(base + e.dot(&tm))).sum::<f64>()
                    / self.quadrature.len() as f64
            }
            (Compliance::Adversarial { epsilon }, _) => self.link.mean(base - epsilon * self.norm.dual_norm_value(&tm)?),
        };
        Ok(self.offset + mean)
    }

    /// Best pair for context `x` under the compliance semantics. The
    /// optimal recourse is `x_M + γ·∂‖θ_M‖_⋆` in every mode, since each
    /// expected reward is increasing in `x̌_Mᵀθ_M`; ties go to the lowest arm.
    pub fn optimal_value(&self, x: &Context) -> Result<BestPair, EnvError> {
        let mut best: Option<BestPair> = None;
        for a in 0..self.arms() {
            let (_, tm) = split(&self.thetas[a], self.d_i);
            let recourse = oracle_recourse(&tm, &x.mutable, self.gamma, &self.norm)?;
            let value = self.expected_reward(a, x, &recourse)?;
            if best.as_ref().is_none_or(|b| value > b.value) {
                best = Some(BestPair { arm: a, recourse, value });
            }
        }
        best.ok_or_else(|| EnvError::Config("no arms".into()))
    }

    /// Expected-value regret of playing `(arm, recourse)` at `x`, clamped at 0.
    pub fn regret_of(&self, x: &Context, arm: usize, recourse: &Vector) -> Result<f64, EnvError> {
        let opt = self.optimal_value(x)?.value;
        let got = self.expected_reward(arm, x, recourse)?;
        let gap = opt - got;
        debug_assert!(
            gap >= -1e-9 * (1.0 + opt.abs()),
            "played pair beats the optimum by {}",
            -gap
        );
        Ok(gap.max(0.0))
    }
}

fn chi_quantile(d: usize, p: f64) -> f64 {
    if d == 0 {
        return 0.0;
    }
    ChiSquared::new(d as f64)
        .map(|c| c.inverse_cdf(p).sqrt())
        .unwrap_or(f64::NAN)
}

/// Largest `γ̂` with `Σ x̄_M x̄_Mᵀ ⪰ γ̂²·n·I` over the realized mutable
/// blocks. `None` for no samples or an empty mutable block.
pub fn coverage(realized_mutable: &[Vector]) -> Option<f64> {
    let n = realized_mutable.len();
    let d = realized_mutable.first()?.len();
    if d == 0 {
        return None;
    }
    let mut s = DMatrix::zeros(d, d);
    for x in realized_mutable {
        s.ger(1.0, x, x, 1.0);
    }
    let lmin = s.symmetric_eigenvalues().min();
    Some((lmin.max(0.0) / n as f64).sqrt())
}

fn load_pool(path: &Path, names: Option<&[String]>, d: usize) -> Result<Vec<Vector>, EnvError> {
    let err = |reason: String| EnvError::Pool {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let columns: Vec<usize> = match names {
        Some(names) => names
            .iter()
            .map(|n| {
                header
                    .iter()
                    .position(|h| h.trim() == n)
                    .ok_or_else(|| err(format!("missing column {n:?}")))
            })
            .collect::<Result<_, _>>()?,
        None if header.len() == d => (0..d).collect(),
        None => return Err(err(format!("{} columns for {} coefficients", header.len(), d))),
    };
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let row = columns
            .iter()
            .map(|&c| {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("row {}: bad value in column {}", line + 2, c + 1)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(Vector::from_vec(row));
    }
    if rows.is_empty() {
        return Err(err("pool is empty".into()));
    }
    Ok(rows)
}
