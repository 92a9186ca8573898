//! Advice sources for the gated policy.
//!
//! Two synthetic advisors read the true arm parameters: a q-quality oracle
//! that answers optimally with probability `q` and at random otherwise, and
//! an η-suboptimal oracle that always answers within `η` of optimal. The
//! HTTP advisor renders a plain-text prompt, posts it to a chat-completion
//! endpoint and parses a `treatment=..., <feature>=...` reply.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::{split, Context};
use crate::geometry::{NormSpec, Vector};
use crate::glm::LinkFn;
use crate::solver::{oracle_best_pair, SolverError};

pub const API_KEY_ENV: &str = "RECOURSE_BANDIT_API_KEY";

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("could not parse advice: {reason}")]
    Parse { reason: String },

    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },

    #[error("endpoint returned status {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("malformed response body: {0}")]
    Response(String),

    #[error("invalid advisor config: {0}")]
    Config(String),

    #[error("cache I/O at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn parse_error(reason: impl Into<String>) -> AdvisorError {
    AdvisorError::Parse { reason: reason.into() }
}

/// A recommended arm and an absolute target for the mutable block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub arm: usize,
    pub recourse: Vector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

/// True parameters the synthetic advisors consult.
#[derive(Debug, Clone)]
pub struct Truth {
    /// One parameter per arm in `(θ_I, θ_M)` layout.
    pub thetas: Vec<Vector>,
    pub link: LinkFn,
    pub gamma: f64,
    pub norm: NormSpec,
}

pub trait Advisor: Send + Sync {
    fn advise(&self, x: &Context, rng: &mut dyn RngCore) -> Result<Advice, AdvisorError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum AdvisorSpec {
    SyntheticQ { q: f64 },
    #[serde(alias = "eta_suboptimal")]
    Eta { eta: f64 },
    Http(HttpSpec),
}

impl AdvisorSpec {
    pub fn validate(&self) -> Result<(), AdvisorError> {
        match self {
            Self::SyntheticQ { q } if !(0.0..=1.0).contains(q) => {
                Err(AdvisorError::Config(format!("q must lie in [0, 1], got {q}")))
            }
            Self::Eta { eta } if !(eta.is_finite() && *eta >= 0.0) => {
                Err(AdvisorError::Config(format!("eta must be finite and nonnegative, got {eta}")))
            }
            Self::Http(h) => h.validate(),
            _ => Ok(()),
        }
    }

    /// Instantiate against the environment's truth. `cache_override`
    /// replaces the HTTP cache directory when given.
    pub fn build(&self, truth: &Truth, cache_override: Option<&PathBuf>) -> Result<Arc<dyn Advisor>, AdvisorError> {
        self.validate()?;
        Ok(match self {
            Self::SyntheticQ { q } => Arc::new(SyntheticQ {
                q: *q,
                truth: truth.clone(),
            }),
            Self::Eta { eta } => Arc::new(EtaSuboptimal {
                eta: *eta,
                truth: truth.clone(),
            }),
            Self::Http(h) => {
                let mut h = h.clone();
                if let Some(dir) = cache_override {
                    h.cache_dir = Some(dir.clone());
                }
                if h.treatments.len() != truth.thetas.len() {
                    return Err(AdvisorError::Config(format!(
                        "{} treatment descriptions for {} arms",
                        h.treatments.len(),
                        truth.thetas.len()
                    )));
                }
                Arc::new(HttpAdvisor::new(h, truth.gamma)?)
            }
        })
    }
}

/// Optimal pair with probability `q`, otherwise a uniform arm and a
/// recourse with uniform direction and radius uniform in `[0, γ]`.
#[derive(Debug, Clone)]
pub struct SyntheticQ {
    pub q: f64,
    pub truth: Truth,
}

impl Advisor for SyntheticQ {
    fn advise(&self, x: &Context, rng: &mut dyn RngCore) -> Result<Advice, AdvisorError> {
        let t = &self.truth;
        if rng.random::<f64>() < self.q {
            let best = oracle_best_pair(&t.thetas, x, t.gamma, &t.norm, &t.link)?;
            return Ok(Advice {
                arm: best.arm,
                recourse: best.recourse,
                raw_text: None,
            });
        }
        let arm = rng.random_range(0..t.thetas.len());
        let offset = t.norm.sample_uniform_radius(x.dim_mutable(), t.gamma, rng);
        Ok(Advice {
            arm,
            recourse: &x.mutable + offset,
            raw_text: None,
        })
    }
}

/// Optimal arm with the recourse pulled back along the descent direction
/// until the expected reward is `min(η, achievable)` below optimal.
#[derive(Debug, Clone)]
pub struct EtaSuboptimal {
    pub eta: f64,
    pub truth: Truth,
}

impl Advisor for EtaSuboptimal {
    fn advise(&self, x: &Context, _rng: &mut dyn RngCore) -> Result<Advice, AdvisorError> {
        let t = &self.truth;
        let best = oracle_best_pair(&t.thetas, x, t.gamma, &t.norm, &t.link)?;
        let theta = &t.thetas[best.arm];
        let (ti, tm) = split(theta, x.dim_immutable());
        let slope = t.norm.dual_norm_value(&tm).map_err(SolverError::from)?;
        let dir = t.norm.dual_subgradient(&tm).map_err(SolverError::from)?;
        let base = x.immutable.dot(&ti) + x.mutable.dot(&tm);
        let reward = |s: f64| t.link.mean(base + s * slope);
        let top = reward(t.gamma);
        let floor = reward(-t.gamma);
        let target = top - self.eta.min(top - floor);
        let s = match t.link {
            _ if self.eta == 0.0 || slope == 0.0 => t.gamma,
            _ if target <= floor => -t.gamma,
            LinkFn::Identity => (t.gamma - self.eta / slope).max(-t.gamma),
            LinkFn::Logistic { .. } => {
                // Reward is increasing in s; keep the upper end feasible.
                let (mut lo, mut hi) = (-t.gamma, t.gamma);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if reward(mid) >= target {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            }
        };
        let recourse = if s == t.gamma {
            best.recourse
        } else {
            &x.mutable + dir * s
        };
        Ok(Advice {
            arm: best.arm,
            recourse,
            raw_text: None,
        })
    }
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_system() -> String {
    "You are a helpful medical assistant helping to manage patients with hypertension.".into()
}
fn default_preamble() -> String {
    "A patient has hypertension.".into()
}
fn default_objective() -> String {
    "minimize the Systolic Blood Pressure for the NEXT visit".into()
}
fn default_note() -> String {
    "Features are standardized (mean=0, std=1).".into()
}
fn default_budget_text() -> String {
    "two norms".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSpec {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// One name per context coordinate, immutable block first.
    pub feature_names: Vec<String>,
    /// Number of trailing coordinates that are mutable.
    pub num_mutable: usize,
    /// One description per arm.
    pub treatments: Vec<String>,
    #[serde(default = "default_system")]
    pub system_prompt: String,
    #[serde(default = "default_preamble")]
    pub preamble: String,
    #[serde(default = "default_objective")]
    pub objective: String,
    #[serde(default = "default_note")]
    pub note: String,
    #[serde(default = "default_budget_text")]
    pub budget_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl HttpSpec {
    /// Field defaults from the hypertension case study; endpoint and model
    /// still need to be set.
    pub fn case_study(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            feature_names: [
                "female",
                "age",
                "cvd_hx_baseline",
                "race",
                "smoking",
                "Systolic Blood Pressure for this visit",
                "DietScore",
                "PhyActHours",
            ]
            .map(String::from)
            .to_vec(),
            num_mutable: 2,
            treatments: vec![
                "Prescribing Beta-blocker.".into(),
                "ACE Inhibitor + Calcium channel blockers + Diuretics.".into(),
            ],
            system_prompt: default_system(),
            preamble: default_preamble(),
            objective: default_objective(),
            note: "Features are standardized (mean=0, std=1). A larger `DietScore' indicates a healthier diet.".into(),
            budget_text: default_budget_text(),
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), AdvisorError> {
        if self.num_mutable > self.feature_names.len() {
            return Err(AdvisorError::Config(format!(
                "{} mutable features but only {} names",
                self.num_mutable,
                self.feature_names.len()
            )));
        }
        if self.treatments.is_empty() {
            return Err(AdvisorError::Config("no treatments listed".into()));
        }
        if self.endpoint.is_empty() {
            return Err(AdvisorError::Config("empty endpoint".into()));
        }
        Ok(())
    }

    pub fn mutable_names(&self) -> &[String] {
        &self.feature_names[self.feature_names.len() - self.num_mutable..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "System Instruction: {}", self.system)?;
        writeln!(f)?;
        f.write_str(&self.user)
    }
}

fn count_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| (*w).to_string())
}

/// Render the case-study prompt for context `x` and budget `gamma`.
pub fn render_prompt(spec: &HttpSpec, x: &Context, gamma: f64) -> Result<Prompt, AdvisorError> {
    if spec.feature_names.len() != x.dim() || spec.num_mutable != x.dim_mutable() {
        return Err(AdvisorError::Config(format!(
            "{} feature names ({} mutable) for a context with {} coordinates ({} mutable)",
            spec.feature_names.len(),
            spec.num_mutable,
            x.dim(),
            x.dim_mutable()
        )));
    }
    let k = spec.treatments.len();
    let mut user = String::new();
    let mut line = |s: String| {
        user.push_str(&s);
        user.push('\n');
    };
    line(format!("{} There are {} treatment options:", spec.preamble, count_word(k)));
    for (i, t) in spec.treatments.iter().enumerate() {
        line(format!("- Treatment {}: {}", i + 1, t));
    }
    line(String::new());
    line("Input Data: Given the following patient features:".into());
    let values = x.full();
    let fields: Vec<String> = spec
        .feature_names
        .iter()
        .zip(values.iter())
        .map(|(n, v)| format!("\"{n}\": {v:.2}"))
        .collect();
    line(format!("{{{}}}", fields.join(", ")));
    line(String::new());
    line(format!("Note: {}", spec.note));
    line(String::new());
    let choices = match k {
        1 => "1".to_string(),
        2 => "1 or 2".to_string(),
        _ => format!("1 to {k}"),
    };
    let mutable: Vec<String> = spec.mutable_names().iter().map(|n| format!("`{n}'")).collect();
    line(format!(
        "Task: The goal is to {}. Please recommend the optimal treatment ({}) and suggest changes ONLY to {}.",
        spec.objective,
        choices,
        join_and(&mutable)
    ));
    line(String::new());
    line("Constraints:".into());
    line(format!(
        "- Make sure the {} of the feature changes are within {} units.",
        spec.budget_text, gamma
    ));
    line(format!("- Do not analyze, only Respond in the format: {}", format_line(spec.mutable_names())));
    Ok(Prompt {
        system: spec.system_prompt.clone(),
        user,
    })
}

fn join_and(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [a] => a.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// `treatment=..., <name₁>=..., <name₂>=...`
pub fn format_line(mutable_names: &[String]) -> String {
    std::iter::once("treatment=...".to_string())
        .chain(mutable_names.iter().map(|n| format!("{n}=...")))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Parse `treatment=<1-based int>, <name>=<float>, ...`. Keys are matched
/// case-insensitively; every mutable name must appear exactly once and no
/// other key may appear.
pub fn parse_advice(text: &str, k: usize, mutable_names: &[String]) -> Result<Advice, AdvisorError> {
    let mut arm = None;
    let mut values: Vec<Option<f64>> = vec![None; mutable_names.len()];
    let cleaned = text.trim().trim_matches(|c| c == '`' || c == '"' || c == '.');
    for token in cleaned.split([',', '\n', ';']) {
        let token = token.trim().trim_matches('`');
        if token.is_empty() {
            continue;
        }
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| parse_error(format!("expected key=value, found {token:?}")))?;
        let key = key.trim().to_lowercase();
        let value = value.trim().trim_end_matches('.');
        if key == "treatment" {
            if arm.is_some() {
                return Err(parse_error("treatment given twice"));
            }
            let t: usize = value
                .parse()
                .map_err(|_| parse_error(format!("treatment {value:?} is not a positive integer")))?;
            if t == 0 || t > k {
                return Err(parse_error(format!("treatment {t} out of range 1..={k}")));
            }
            arm = Some(t - 1);
            continue;
        }
        let idx = mutable_names
            .iter()
            .position(|n| n.to_lowercase() == key)
            .ok_or_else(|| parse_error(format!("unexpected field {key:?}")))?;
        if values[idx].is_some() {
            return Err(parse_error(format!("{key} given twice")));
        }
        let v: f64 = value
            .parse()
            .map_err(|_| parse_error(format!("{key}={value:?} is not a number")))?;
        if !v.is_finite() {
            return Err(parse_error(format!("{key} is not finite")));
        }
        values[idx] = Some(v);
    }
    let arm = arm.ok_or_else(|| parse_error("missing treatment"))?;
    let recourse = values
        .iter()
        .zip(mutable_names)
        .map(|(v, n)| v.ok_or_else(|| parse_error(format!("missing {n}"))))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(Advice {
        arm,
        recourse: Vector::from_vec(recourse),
        raw_text: Some(text.to_string()),
    })
}

/// Chat-completion client with retries and an optional response cache.
pub struct HttpAdvisor {
    spec: HttpSpec,
    gamma: f64,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpAdvisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpAdvisor")
            .field("endpoint", &self.spec.endpoint)
            .field("model", &self.spec.model)
            .finish()
    }
}

enum Attempt {
    Done(String),
    Retry(AdvisorError),
}

impl HttpAdvisor {
    pub fn new(spec: HttpSpec, gamma: f64) -> Result<Self, AdvisorError> {
        spec.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(spec.timeout_ms))
            .build()
            .map_err(|e| AdvisorError::Transport(e.to_string()))?;
        Ok(Self { spec, gamma, client })
    }

    fn cache_path(&self, prompt: &Prompt) -> Option<PathBuf> {
        let dir = self.spec.cache_dir.as_ref()?;
        let mut h = Sha256::new();
        for part in [&self.spec.model, &prompt.system, &prompt.user] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        Some(dir.join(format!("{}.txt", hex::encode(h.finalize()))))
    }

    fn store(&self, path: &PathBuf, content: &str) -> Result<(), AdvisorError> {
        let io = |source| AdvisorError::Cache {
            path: path.clone(),
            source,
        };
        let dir = path.parent().expect("cache file has a parent");
        fs::create_dir_all(dir).map_err(io)?;
        let tmp = dir.join(format!(
            ".{}.{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("entry"),
            std::process::id()
        ));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(content.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    fn attempt(&self, prompt: &Prompt) -> Attempt {
        let body = serde_json::json!({
            "model": self.spec.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        });
        let mut req = self.client.post(&self.spec.endpoint).json(&body);
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(AdvisorError::Timeout { attempts: 0 }),
            Err(e) => return Attempt::Retry(AdvisorError::Transport(e.to_string())),
        };
        let status = resp.status();
        if !status.is_success() {
            return Attempt::Retry(AdvisorError::Status {
                status: status.as_u16(),
                attempts: 0,
            });
        }
        let json: serde_json::Value = match resp.json() {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return Attempt::Retry(AdvisorError::Timeout { attempts: 0 }),
            Err(e) => return Attempt::Retry(AdvisorError::Response(e.to_string())),
        };
        match json.pointer("/choices/0/message/content").and_then(|c| c.as_str()) {
            Some(s) => Attempt::Done(s.to_string()),
            None => Attempt::Retry(AdvisorError::Response("no choices[0].message.content".into())),
        }
    }

    /// Send the prompt, retrying transport failures and non-2xx replies.
    pub fn complete(&self, prompt: &Prompt) -> Result<String, AdvisorError> {
        let cache = self.cache_path(prompt);
        if let Some(path) = &cache {
            if let Ok(hit) = fs::read_to_string(path) {
                return Ok(hit);
            }
        }
        let attempts = self.spec.retries + 1;
        let mut last = None;
        for i in 0..attempts {
            if i > 0 {
                let delay = self.spec.backoff_ms.saturating_mul(1 << (i - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(prompt) {
                Attempt::Done(text) => {
                    if let Some(path) = &cache {
                        self.store(path, &text)?;
                    }
                    return Ok(text);
                }
                Attempt::Retry(e) => {
                    log::debug!("advisor attempt {} of {} failed: {e}", i + 1, attempts);
                    last = Some(e);
                }
            }
        }
        Err(match last.expect("at least one attempt") {
            AdvisorError::Timeout { .. } => AdvisorError::Timeout { attempts },
            AdvisorError::Status { status, .. } => AdvisorError::Status { status, attempts },
            e => e,
        })
    }
}

impl Advisor for HttpAdvisor {
    fn advise(&self, x: &Context, _rng: &mut dyn RngCore) -> Result<Advice, AdvisorError> {
        let prompt = render_prompt(&self.spec, x, self.gamma)?;
        let text = self.complete(&prompt)?;
        parse_advice(&text, self.spec.treatments.len(), self.spec.mutable_names())
    }
}
