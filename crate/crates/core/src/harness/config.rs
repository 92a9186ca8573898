use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advisors::AdvisorSpec;
use crate::environments::{Compliance, EnvSpec, Environment, LinkKind};
use crate::geometry::NormSpec;
use crate::glm::{GlmConfig, LinkFn};
use crate::policies::{PolicyKind, PolicySpec};
use crate::solver::SolverParams;

use super::HarnessError;

fn default_horizon() -> usize {
    2000
}
fn default_runs() -> usize {
    10
}
fn default_gamma() -> f64 {
    3.0
}
fn default_norm() -> NormSpec {
    NormSpec::l2()
}
fn default_lambda() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.1
}
fn default_scale() -> f64 {
    1.0
}

/// Learner constants. Unset bounds are derived from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmSection {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Sub-Gaussian noise level assumed by the confidence radius.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_theta: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_scale")]
    pub radius_scale: f64,
    /// Logistic curvature floor; derived from the bounds when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_mu: Option<f64>,
}

impl Default for GlmSection {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            sigma: default_sigma(),
            beta_x: None,
            beta_theta: None,
            delta: default_delta(),
            radius_scale: default_scale(),
            c_mu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(alias = "T", default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_norm")]
    pub norm: NormSpec,
    pub env: EnvSpec,
    #[serde(default)]
    pub glm: GlmSection,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(alias = "policy")]
    pub policies: Vec<PolicySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Gaussian benchmark: d = 20, K = 10, γ = 3, LIBRA with Δ = 1 and
    /// q = 0.8 against GLRB and LinUCB.
    pub fn synthetic_default() -> Self {
        Self {
            horizon: default_horizon(),
            runs: default_runs(),
            base_seed: 0,
            gamma: 3.0,
            norm: NormSpec::l2(),
            env: EnvSpec::gaussian(20, 10, 1.0),
            glm: GlmSection::default(),
            solver: SolverParams::default(),
            policies: vec![
                PolicySpec::new(PolicyKind::Libra {
                    delta: 1.0,
                    advisor: AdvisorSpec::SyntheticQ { q: 0.8 },
                }),
                PolicySpec::new(PolicyKind::Glrb),
                PolicySpec::new(PolicyKind::Linucb),
            ],
            output_dir: None,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Every problem with the config, not just the first.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut errs = Vec::new();
        if self.runs == 0 {
            errs.push("runs must be at least 1".to_string());
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            errs.push(format!("gamma must be finite and nonnegative, got {}", self.gamma));
        }
        errs.extend(self.env.validate());
        let g = &self.glm;
        for (name, v) in [("lambda", g.lambda), ("sigma", g.sigma), ("radius_scale", g.radius_scale)] {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("glm.{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("beta_x", g.beta_x), ("beta_theta", g.beta_theta), ("c_mu", g.c_mu)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    errs.push(format!("glm.{name} must be positive, got {v}"));
                }
            }
        }
        if !(g.delta > 0.0 && g.delta < 1.0) {
            errs.push(format!("glm.delta must lie in (0, 1), got {}", g.delta));
        }
        if !(self.solver.tol.is_finite() && self.solver.tol > 0.0) {
            errs.push(format!("solver.tol must be positive, got {}", self.solver.tol));
        }
        if self.solver.max_iter == 0 {
            errs.push("solver.max_iter must be at least 1".into());
        }
        if self.policies.is_empty() {
            errs.push("at least one policy is required".into());
        }
        let mut labels = std::collections::HashSet::new();
        for p in &self.policies {
            errs.extend(p.validate());
            if !labels.insert(p.label()) {
                errs.push(format!("policy label {:?} is used twice", p.label()));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(errs))
        }
    }

    /// Learner constants for one run's environment.
    pub fn resolve_glm(&self, env: &Environment) -> (GlmConfig, LinkFn) {
        let g = &self.glm;
        let reach = self.norm.euclidean_reach() * (self.gamma + self.env.compliance.epsilon());
        let beta_x = g.beta_x.unwrap_or_else(|| env.context_radius() + reach);
        let beta_theta = g.beta_theta.unwrap_or_else(|| env.parameter_radius().max(f64::MIN_POSITIVE));
        let link = match self.env.link {
            LinkKind::Identity => LinkFn::Identity,
            LinkKind::Logistic => match g.c_mu {
                Some(c_mu) => LinkFn::Logistic { c_mu },
                None => LinkFn::logistic_for_slab(beta_x, beta_theta),
            },
        };
        let cfg = GlmConfig {
            lambda: g.lambda,
            sigma: g.sigma,
            beta_x,
            beta_theta,
            delta: g.delta,
            arms: env.arms(),
            radius_scale: g.radius_scale,
        };
        (cfg, link)
    }
}

/// Parameters that [`super::sweep`] can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Delta,
    Q,
    Epsilon,
    Gamma,
}

impl std::str::FromStr for SweepParam {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "delta" => Ok(Self::Delta),
            "q" => Ok(Self::Q),
            "epsilon" | "eps" => Ok(Self::Epsilon),
            "gamma" => Ok(Self::Gamma),
            _ => Err(HarnessError::UnknownParam(s.to_string())),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Delta => "delta",
            Self::Q => "q",
            Self::Epsilon => "epsilon",
            Self::Gamma => "gamma",
        }
    }

    /// Copy of `cfg` with the parameter set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, HarnessError> {
        let mut out = cfg.clone();
        let mut touched = false;
        match self {
            Self::Gamma => {
                out.gamma = value;
                touched = true;
            }
            Self::Epsilon => match &mut out.env.compliance {
                Compliance::Full => {}
                Compliance::Random { epsilon } | Compliance::Adversarial { epsilon } => {
                    *epsilon = value;
                    touched = true;
                }
            },
            Self::Delta => {
                for p in &mut out.policies {
                    if let PolicyKind::Libra { delta, .. } = &mut p.kind {
                        *delta = value;
                        touched = true;
                    }
                }
            }
            Self::Q => {
                for p in &mut out.policies {
                    if let Some(AdvisorSpec::SyntheticQ { q }) = p.advisor_mut() {
                        *q = value;
                        touched = true;
                    }
                }
            }
        }
        if touched {
            Ok(out)
        } else {
            Err(HarnessError::Config(vec![format!(
                "nothing in the config depends on {}",
                self.name()
            )]))
        }
    }
}
