//! Sequential decision policies sharing one `decide`/`observe` interface.
//!
//! * `glrb`: optimistic arm and recourse from the per-arm confidence sets.
//! * `libra`: the same, but when the confidence interval at the chosen pair
//!   is wider than `delta` it plays the advisor's recommendation instead.
//! * `linucb`: `glrb` with a zero recourse budget.
//! * `advisor_only`: always plays the advisor's recommendation.
//!
//! Every policy updates the statistics of the arm that was played with the
//! realized context, whoever chose it.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisors::{Advisor, AdvisorSpec};
use crate::context::Context;
use crate::environments::Compliance;
use crate::geometry::{NormSpec, Vector};
use crate::glm::{ArmModel, GlmConfig, GlmError, LinkFn};
use crate::solver::{solve_oro_arm, solve_oro_nc_arm, solve_robust_oro_arm, OroProblem, SolverError, SolverParams};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Solver(#[from] SolverError),

    #[error(transparent)]
    Glm(#[from] GlmError),

    #[error("invalid policy: {0}")]
    Config(String),

    #[error("reward {0} is not finite")]
    NonFiniteReward(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Glrb,
    Libra { delta: f64, advisor: AdvisorSpec },
    #[serde(alias = "lin_ucb")]
    Linucb,
    AdvisorOnly { advisor: AdvisorSpec },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Label used in outputs; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Plan against the environment's non-compliance model. When false the
    /// policy assumes full compliance.
    #[serde(default = "default_true")]
    pub robust: bool,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            name: None,
            robust: true,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let base = match self.kind {
            PolicyKind::Glrb => "glrb",
            PolicyKind::Libra { .. } => "libra",
            PolicyKind::Linucb => "linucb",
            PolicyKind::AdvisorOnly { .. } => "advisor_only",
        };
        if self.robust {
            base.to_string()
        } else {
            format!("{base}_plain")
        }
    }

    pub fn advisor(&self) -> Option<&AdvisorSpec> {
        match &self.kind {
            PolicyKind::Libra { advisor, .. } | PolicyKind::AdvisorOnly { advisor } => Some(advisor),
            _ => None,
        }
    }

    pub fn advisor_mut(&mut self) -> Option<&mut AdvisorSpec> {
        match &mut self.kind {
            PolicyKind::Libra { advisor, .. } | PolicyKind::AdvisorOnly { advisor } => Some(advisor),
            _ => None,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let PolicyKind::Libra { delta, .. } = self.kind {
            if !(delta > 0.0) {
                errs.push(format!("{}: delta must be positive, got {delta}", self.label()));
            }
        }
        if let Some(a) = self.advisor() {
            if let Err(e) = a.validate() {
                errs.push(format!("{}: {e}", self.label()));
            }
        }
        errs
    }
}

/// Everything a policy needs to know about the problem.
#[derive(Debug, Clone)]
pub struct Setup {
    pub arms: usize,
    pub dim_immutable: usize,
    pub dim_mutable: usize,
    pub glm: GlmConfig,
    pub link: LinkFn,
    pub norm: NormSpec,
    pub gamma: f64,
    pub compliance: Compliance,
    pub solver: SolverParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub arm: usize,
    /// Proposed mutable block `x̌_M`.
    pub recourse: Vector,
    /// The advisor's recommendation was played.
    pub queried_advisor: bool,
    /// Confidence width at the bandit's own optimistic pair (at the played
    /// pair for `advisor_only`).
    pub bandit_ci: f64,
    /// The advisor was asked but failed; the bandit pair was played.
    pub advisor_failed: bool,
}

#[derive(Clone, Copy)]
enum Mode {
    Glrb,
    Libra(f64),
    LinUcb,
    AdvisorOnly,
}

pub struct Policy {
    name: String,
    mode: Mode,
    advisor: Option<Arc<dyn Advisor>>,
    arms: Vec<ArmModel>,
    setup: Setup,
    /// Non-compliance model the policy plans against.
    planning: Compliance,
    deviations: Vec<Vector>,
    deviation_sum: Vector,
    advisor_failures: usize,
}

impl std::fmt::Debug for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Policy")
            .field("name", &self.name)
            .field("arms", &self.arms.len())
            .field("advisor_failures", &self.advisor_failures)
            .finish()
    }
}

impl Policy {
    pub fn new(spec: &PolicySpec, setup: Setup, advisor: Option<Arc<dyn Advisor>>) -> Result<Self, PolicyError> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(PolicyError::Config(errs.join("; ")));
        }
        if setup.arms == 0 {
            return Err(PolicyError::Config("at least one arm is required".into()));
        }
        let mode = match spec.kind {
            PolicyKind::Glrb => Mode::Glrb,
            PolicyKind::Libra { delta, .. } => Mode::Libra(delta),
            PolicyKind::Linucb => Mode::LinUcb,
            PolicyKind::AdvisorOnly { .. } => Mode::AdvisorOnly,
        };
        if matches!(mode, Mode::Libra(_) | Mode::AdvisorOnly) && advisor.is_none() {
            return Err(PolicyError::Config(format!("{} needs an advisor", spec.label())));
        }
        let dim = setup.dim_immutable + setup.dim_mutable;
        Ok(Self {
            name: spec.label(),
            mode,
            advisor,
            arms: (0..setup.arms).map(|_| ArmModel::new(dim, &setup.glm, &setup.link)).collect(),
            planning: if spec.robust { setup.compliance } else { Compliance::Full },
            deviation_sum: Vector::zeros(setup.dim_mutable),
            setup,
            deviations: Vec::new(),
            advisor_failures: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arms(&self) -> &[ArmModel] {
        &self.arms
    }

    pub fn advisor_failures(&self) -> usize {
        self.advisor_failures
    }

    pub fn deviations(&self) -> &[Vector] {
        &self.deviations
    }

    /// Optimistic pair over all arms; ties go to the lowest index.
    fn bandit_pair(&self, x: &Context, solver_rng: &mut dyn RngCore) -> Result<(usize, Vector), PolicyError> {
        let gamma = match self.mode {
            Mode::LinUcb => 0.0,
            _ => self.setup.gamma,
        };
        let mean_deviation;
        let samples: &[Vector] = match self.setup.link {
            // Only the mean matters for a linear link.
            LinkFn::Identity if !self.deviations.is_empty() => {
                mean_deviation = [&self.deviation_sum / self.deviations.len() as f64];
                &mean_deviation
            }
            _ => &self.deviations,
        };
        let mut best: Option<(usize, Vector, f64)> = None;
        for (a, arm) in self.arms.iter().enumerate() {
            let p = OroProblem {
                context: x,
                gamma,
                norm: &self.setup.norm,
                set: arm.ellipsoid(),
                params: self.setup.solver,
            };
            let sol = match self.planning {
                Compliance::Full => solve_oro_arm(&p, solver_rng)?,
                Compliance::Random { .. } => solve_robust_oro_arm(&p, samples, &self.setup.link, solver_rng)?,
                Compliance::Adversarial { epsilon } => solve_oro_nc_arm(&p, epsilon, solver_rng)?.solution,
            };
            if best.as_ref().is_none_or(|(_, _, v)| sol.value > *v) {
                best = Some((a, sol.recourse, sol.value));
            }
        }
        let (arm, recourse, _) = best.expect("at least one arm");
        Ok((arm, recourse))
    }

    fn ci(&self, arm: usize, x: &Context, recourse: &Vector) -> Result<f64, PolicyError> {
        let full = x.with_mutable(recourse.clone()).full();
        Ok(self.arms[arm].ucb_lcb(&self.setup.link, &full)?.ci)
    }

    /// Ask the advisor; `None` on any failure (logged and counted).
    fn consult(&mut self, x: &Context, advisor_rng: &mut dyn RngCore) -> Result<Option<(usize, Vector)>, PolicyError> {
        let advisor = self.advisor.as_ref().expect("checked at construction");
        let advice = match advisor.advise(x, advisor_rng) {
            Ok(a) if a.arm < self.arms.len() && a.recourse.len() == x.dim_mutable() => a,
            Ok(a) => {
                self.advisor_failures += 1;
                log::warn!("{}: advisor returned an unusable pair (arm {})", self.name, a.arm);
                return Ok(None);
            }
            Err(e) => {
                self.advisor_failures += 1;
                log::warn!("{}: advisor failed, playing the bandit pair: {e}", self.name);
                return Ok(None);
            }
        };
        let recourse = self
            .setup
            .norm
            .project_to_ball(&x.mutable, self.setup.gamma, &advice.recourse)
            .map_err(SolverError::from)?;
        Ok(Some((advice.arm, recourse)))
    }

    /// Choose an arm and a recourse for context `x`. `solver_rng` feeds
    /// solver restarts, `advisor_rng` feeds the advisor; keeping them apart
    /// makes a never-opening gate reproduce `glrb` exactly.
    pub fn decide(
        &mut self,
        x: &Context,
        solver_rng: &mut dyn RngCore,
        advisor_rng: &mut dyn RngCore,
    ) -> Result<Decision, PolicyError> {
        if x.dim_immutable() != self.setup.dim_immutable || x.dim_mutable() != self.setup.dim_mutable {
            return Err(SolverError::DimensionMismatch {
                expected: self.setup.dim_immutable + self.setup.dim_mutable,
                actual: x.dim(),
            }
            .into());
        }
        if let Mode::AdvisorOnly = self.mode {
            if let Some((arm, recourse)) = self.consult(x, advisor_rng)? {
                let bandit_ci = self.ci(arm, x, &recourse)?;
                return Ok(Decision {
                    arm,
                    recourse,
                    queried_advisor: true,
                    bandit_ci,
                    advisor_failed: false,
                });
            }
            let (arm, recourse) = self.bandit_pair(x, solver_rng)?;
            let bandit_ci = self.ci(arm, x, &recourse)?;
            return Ok(Decision {
                arm,
                recourse,
                queried_advisor: false,
                bandit_ci,
                advisor_failed: true,
            });
        }
        let (arm, recourse) = self.bandit_pair(x, solver_rng)?;
        let bandit_ci = self.ci(arm, x, &recourse)?;
        let bandit = Decision {
            arm,
            recourse,
            queried_advisor: false,
            bandit_ci,
            advisor_failed: false,
        };
        match self.mode {
            Mode::Libra(delta) if bandit_ci > delta => Ok(match self.consult(x, advisor_rng)? {
                Some((arm, recourse)) => Decision {
                    arm,
                    recourse,
                    queried_advisor: true,
                    ..bandit
                },
                None => Decision {
                    advisor_failed: true,
                    ..bandit
                },
            }),
            _ => Ok(bandit),
        }
    }

    /// Update the played arm with the context that generated `reward`.
    pub fn observe(&mut self, decision: &Decision, realized: &Context, reward: f64) -> Result<(), PolicyError> {
        if !reward.is_finite() {
            return Err(PolicyError::NonFiniteReward(reward));
        }
        if decision.arm >= self.arms.len() {
            return Err(PolicyError::Config(format!("arm {} out of range", decision.arm)));
        }
        self.arms[decision.arm].update(&realized.full(), reward, &self.setup.glm, &self.setup.link)?;
        if let Compliance::Random { .. } = self.planning {
            let dev = &realized.mutable - &decision.recourse;
            self.deviation_sum += &dev;
            self.deviations.push(dev);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advisors::{Advice, AdvisorError};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn setup(compliance: Compliance) -> Setup {
        Setup {
            arms: 2,
            dim_immutable: 1,
            dim_mutable: 2,
            glm: GlmConfig::default(),
            link: LinkFn::Identity,
            norm: NormSpec::l2(),
            gamma: 1.0,
            compliance,
            solver: SolverParams::default(),
        }
    }

    struct Fixed(usize, Vector);
    impl Advisor for Fixed {
        fn advise(&self, _: &Context, _: &mut dyn RngCore) -> Result<Advice, AdvisorError> {
            Ok(Advice {
                arm: self.0,
                recourse: self.1.clone(),
                raw_text: None,
            })
        }
    }

    struct Broken;
    impl Advisor for Broken {
        fn advise(&self, _: &Context, _: &mut dyn RngCore) -> Result<Advice, AdvisorError> {
            Err(AdvisorError::Parse { reason: "nope".into() })
        }
    }

    fn libra(delta: f64) -> PolicySpec {
        PolicySpec::new(PolicyKind::Libra {
            delta,
            advisor: AdvisorSpec::SyntheticQ { q: 1.0 },
        })
    }

    fn rngs() -> (ChaCha8Rng, ChaCha8Rng) {
        (ChaCha8Rng::seed_from_u64(1), ChaCha8Rng::seed_from_u64(2))
    }

    #[test]
    fn libra_queries_when_fresh() {
        let adv: Arc<dyn Advisor> = Arc::new(Fixed(1, v(&[5.0, 0.0])));
        let mut p = Policy::new(&libra(1.0), setup(Compliance::Full), Some(adv)).unwrap();
        let x = Context::new(v(&[1.0]), v(&[0.0, 0.0]));
        let (mut s, mut a) = rngs();
        let d = p.decide(&x, &mut s, &mut a).unwrap();
        assert!(d.bandit_ci > 1.0);
        assert!(d.queried_advisor);
        assert_eq!(d.arm, 1);
        // Infeasible advice is projected onto the budget.
        assert!((d.recourse.clone() - v(&[1.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn advisor_failure_falls_back_to_the_bandit_pair() {
        let adv: Arc<dyn Advisor> = Arc::new(Broken);
        let mut p = Policy::new(&libra(1.0), setup(Compliance::Full), Some(adv)).unwrap();
        let mut g = Policy::new(&PolicySpec::new(PolicyKind::Glrb), setup(Compliance::Full), None).unwrap();
        let x = Context::new(v(&[1.0]), v(&[0.0, 0.0]));
        let (mut s, mut a) = rngs();
        let d = p.decide(&x, &mut s, &mut a).unwrap();
        let (mut s, mut a) = rngs();
        let e = g.decide(&x, &mut s, &mut a).unwrap();
        assert!(!d.queried_advisor && d.advisor_failed);
        assert_eq!((d.arm, &d.recourse), (e.arm, &e.recourse));
        assert_eq!(p.advisor_failures(), 1);

        let out_of_range: Arc<dyn Advisor> = Arc::new(Fixed(7, v(&[0.0, 0.0])));
        let mut p = Policy::new(&libra(1.0), setup(Compliance::Full), Some(out_of_range)).unwrap();
        let d = p.decide(&x, &mut s, &mut a).unwrap();
        assert!(d.advisor_failed && d.arm < 2);
    }

    #[test]
    fn linucb_keeps_mutable_features() {
        let mut p = Policy::new(&PolicySpec::new(PolicyKind::Linucb), setup(Compliance::Full), None).unwrap();
        let (mut s, mut a) = rngs();
        for i in 0..20 {
            let x = Context::new(v(&[1.0]), v(&[0.1 * i as f64, -0.3]));
            let d = p.decide(&x, &mut s, &mut a).unwrap();
            assert_eq!(d.recourse, x.mutable);
            p.observe(&d, &x.with_mutable(d.recourse.clone()), 1.0).unwrap();
        }
    }

    #[test]
    fn observe_updates_only_the_played_arm() {
        let mut p = Policy::new(&PolicySpec::new(PolicyKind::Glrb), setup(Compliance::Full), None).unwrap();
        let x = Context::new(v(&[1.0]), v(&[0.0, 0.0]));
        let (mut s, mut a) = rngs();
        let d = p.decide(&x, &mut s, &mut a).unwrap();
        p.observe(&d, &x.with_mutable(d.recourse.clone()), 0.5).unwrap();
        assert_eq!(p.arms()[d.arm].pulls(), 1);
        assert_eq!(p.arms()[1 - d.arm].pulls(), 0);
        assert!(matches!(
            p.observe(&d, &x, f64::NAN),
            Err(PolicyError::NonFiniteReward(_))
        ));
    }

    #[test]
    fn random_mode_stores_deviations() {
        let mut p = Policy::new(
            &PolicySpec::new(PolicyKind::Glrb),
            setup(Compliance::Random { epsilon: 0.5 }),
            None,
        )
        .unwrap();
        let x = Context::new(v(&[1.0]), v(&[0.0, 0.0]));
        let (mut s, mut a) = rngs();
        let d = p.decide(&x, &mut s, &mut a).unwrap();
        let realized = x.with_mutable(&d.recourse + v(&[0.1, 0.0]));
        p.observe(&d, &realized, 1.0).unwrap();
        assert_eq!(p.deviations().len(), 1);
        assert!((&p.deviations()[0] - v(&[0.1, 0.0])).norm() < 1e-12);
        // A plain policy ignores the non-compliance model.
        let mut plain = PolicySpec::new(PolicyKind::Glrb);
        plain.robust = false;
        let mut q = Policy::new(&plain, setup(Compliance::Random { epsilon: 0.5 }), None).unwrap();
        q.observe(&d, &realized, 1.0).unwrap();
        assert!(q.deviations().is_empty());
        assert_eq!(plain.label(), "glrb_plain");
    }

    #[test]
    fn construction_errors() {
        assert!(Policy::new(&libra(1.0), setup(Compliance::Full), None).is_err());
        assert!(Policy::new(&libra(0.0), setup(Compliance::Full), Some(Arc::new(Broken))).is_err());
        let mut s = setup(Compliance::Full);
        s.arms = 0;
        assert!(Policy::new(&PolicySpec::new(PolicyKind::Glrb), s, None).is_err());
        let spec: PolicySpec =
            serde_json::from_str(r#"{"kind":"libra","delta":1.0,"advisor":{"kind":"synthetic_q","q":0.8}}"#).unwrap();
        assert_eq!(spec, libra(1.0).clone_with_q(0.8));
    }

    impl PolicySpec {
        fn clone_with_q(mut self, q: f64) -> Self {
            if let Some(AdvisorSpec::SyntheticQ { q: old }) = self.advisor_mut() {
                *old = q;
            }
            self
        }
    }
}
