//! Recourse optimizers.
//!
//! * [`oracle_recourse`] / [`oracle_best_pair`]: known parameters, closed
//!   form `x̌_M = x_M + γ·∂‖θ_M‖_⋆`.
//! * [`solve_oro_arm`]: optimistic recourse over the confidence ellipsoid
//!   by two-block coordinate ascent. The θ-block maximizer is
//!   `θ̂ + ρ·V⁻¹c/‖c‖_{V⁻¹}` for the current context `c`, the recourse block
//!   is the oracle formula at the current θ.
//! * [`solve_robust_oro_arm`]: the same under random non-compliance with an
//!   empirical deviation distribution.
//! * [`solve_oro_nc_arm`]: max-min variant against an adversary that moves
//!   the implemented recourse within an ε-ball.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{concat, split, Context};
use crate::geometry::{GeometryError, NormSpec, Vector};
use crate::glm::{ArmModel, Ellipsoid, GlmError, LinkFn};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),

    #[error(transparent)]
    Glm(#[from] GlmError),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("recourse radius must be finite and nonnegative, got {0}")]
    InvalidRadius(f64),

    #[error("at least one arm is required")]
    EmptyArms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Stop once an iteration improves the objective by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra runs from random feasible starting recourses.
    pub restarts: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            restarts: 0,
        }
    }
}

/// One arm's optimistic recourse problem.
#[derive(Debug, Clone, Copy)]
pub struct OroProblem<'a> {
    pub context: &'a Context,
    pub gamma: f64,
    pub norm: &'a NormSpec,
    pub set: &'a Ellipsoid,
    pub params: SolverParams,
}

impl OroProblem<'_> {
    fn validate(&self) -> Result<(), SolverError> {
        if self.set.dim() != self.context.dim() {
            return Err(SolverError::DimensionMismatch {
                expected: self.set.dim(),
                actual: self.context.dim(),
            });
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(SolverError::InvalidRadius(self.gamma));
        }
        if let Some(d) = self.norm.dim() {
            if d != self.context.dim_mutable() {
                return Err(GeometryError::DimensionMismatch {
                    expected: d,
                    actual: self.context.dim_mutable(),
                }
                .into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OroSolution {
    /// Proposed mutable block `x̌_M` (absolute, not an offset).
    pub recourse: Vector,
    /// Optimistic parameter paired with the recourse.
    pub theta: Vector,
    /// Objective value at `(recourse, theta)`.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration of the returned run.
    pub trace: Vec<f64>,
}

/// Result of the max-min solver: the solution's `value` is the penalized
/// objective `x̌_Mᵀθ_M + x_Iᵀθ_I − ε‖θ_M‖_⋆`.
#[derive(Debug, Clone, PartialEq)]
pub struct NcSolution {
    pub solution: OroSolution,
    /// Adversary's response `x̄_M` to the returned recourse.
    pub worst_case: Vector,
    /// `ε > γ`: the adversary can undo more than the whole recourse budget.
    pub adversary_dominates: bool,
}

/// Best arm and recourse under known parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BestPair {
    pub arm: usize,
    pub recourse: Vector,
    /// `μ` applied to the winning linear index.
    pub value: f64,
}

/// `x_M + γ·∂‖θ_M‖_⋆`.
pub fn oracle_recourse(
    theta_m: &Vector,
    x_m: &Vector,
    gamma: f64,
    norm: &NormSpec,
) -> Result<Vector, SolverError> {
    if theta_m.len() != x_m.len() {
        return Err(SolverError::DimensionMismatch {
            expected: x_m.len(),
            actual: theta_m.len(),
        });
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(SolverError::InvalidRadius(gamma));
    }
    let u = norm.dual_subgradient(theta_m)?;
    Ok(x_m + u * gamma)
}

/// Linear index `x_Iᵀθ_I + x_Mᵀθ_M + shift·‖θ_M‖_⋆`.
pub(crate) fn recourse_index(
    theta: &Vector,
    x: &Context,
    shift: f64,
    norm: &NormSpec,
) -> Result<f64, SolverError> {
    if theta.len() != x.dim() {
        return Err(SolverError::DimensionMismatch {
            expected: x.dim(),
            actual: theta.len(),
        });
    }
    let (ti, tm) = split(theta, x.dim_immutable());
    Ok(x.immutable.dot(&ti) + x.mutable.dot(&tm) + shift * norm.dual_norm_value(&tm)?)
}

/// Solve the full-information problem over all arms. Ties go to the lowest
/// arm index.
pub fn oracle_best_pair(
    thetas: &[Vector],
    x: &Context,
    gamma: f64,
    norm: &NormSpec,
    link: &LinkFn,
) -> Result<BestPair, SolverError> {
    if thetas.is_empty() {
        return Err(SolverError::EmptyArms);
    }
    let mut best: Option<(usize, f64)> = None;
    for (a, th) in thetas.iter().enumerate() {
        let val = recourse_index(th, x, gamma, norm)?;
        if best.is_none_or(|(_, b)| val > b) {
            best = Some((a, val));
        }
    }
    let (arm, index) = best.expect("nonempty");
    let (_, tm) = split(&thetas[arm], x.dim_immutable());
    Ok(BestPair {
        arm,
        recourse: oracle_recourse(&tm, &x.mutable, gamma, norm)?,
        value: link.mean(index),
    })
}

fn random_start<R: Rng + ?Sized>(p: &OroProblem<'_>, rng: &mut R) -> Vector {
    let d_m = p.context.dim_mutable();
    &p.context.mutable + p.norm.sample_uniform_radius(d_m, p.gamma, rng)
}

/// Coordinate ascent from `start`. `adversary` is the ε of the max-min
/// variant (0 for plain ORO-Arm); the θ-block is optimized against the
/// adversary's response `x̄`, which equals `x̌` when ε = 0.
fn coordinate_ascent(p: &OroProblem<'_>, start: Vector, adversary: f64) -> Result<(OroSolution, Vector), SolverError> {
    let ctx = p.context;
    let d_i = ctx.dim_immutable();
    let mut response = start;
    let mut recourse = response.clone();
    let mut theta = p.set.center.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    for _ in 0..p.params.max_iter.max(1) {
        iterations += 1;
        theta = p.set.support(&concat(&ctx.immutable, &response));
        let (ti, tm) = split(&theta, d_i);
        let v = p.norm.dual_subgradient(&tm)?;
        recourse = &ctx.mutable + &v * p.gamma;
        response = &ctx.mutable + &v * (p.gamma - adversary);
        let value = ctx.immutable.dot(&ti) + response.dot(&tm);
        trace.push(value);
        let gain = value - prev;
        prev = value;
        if gain < p.params.tol {
            converged = true;
            break;
        }
    }
    Ok((
        OroSolution {
            recourse,
            theta,
            value: prev,
            iterations,
            converged,
            trace,
        },
        response,
    ))
}

fn best_of_restarts<R: Rng + ?Sized>(
    p: &OroProblem<'_>,
    adversary: f64,
    rng: &mut R,
) -> Result<(OroSolution, Vector), SolverError> {
    let mut best = coordinate_ascent(p, p.context.mutable.clone(), adversary)?;
    for _ in 0..p.params.restarts {
        let start = random_start(p, rng);
        let cand = coordinate_ascent(p, start, adversary)?;
        if cand.0.value > best.0.value {
            best = cand;
        }
    }
    Ok(best)
}

/// Optimistic recourse for one arm. `rng` is only drawn from when
/// `params.restarts > 0`.
pub fn solve_oro_arm<R: Rng + ?Sized>(p: &OroProblem<'_>, rng: &mut R) -> Result<OroSolution, SolverError> {
    p.validate()?;
    Ok(best_of_restarts(p, 0.0, rng)?.0)
}

/// Max-min optimistic recourse against an ε-bounded adversary.
pub fn solve_oro_nc_arm<R: Rng + ?Sized>(
    p: &OroProblem<'_>,
    epsilon: f64,
    rng: &mut R,
) -> Result<NcSolution, SolverError> {
    p.validate()?;
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(SolverError::InvalidRadius(epsilon));
    }
    let (solution, worst_case) = best_of_restarts(p, epsilon, rng)?;
    Ok(NcSolution {
        solution,
        worst_case,
        adversary_dominates: epsilon > p.gamma,
    })
}

/// Optimistic recourse when the implemented mutable block is `x̌_M + ε`
/// with `ε` drawn from the empirical distribution of `deviations`.
///
/// Identity link: the expectation is the mean shift `ε̄`, so the problem is
/// ORO-Arm around `x_M + ε̄`; the recourse is reported in the original
/// coordinates and `value` includes the shift. Logistic link: the recourse
/// block is still exact (every sample term is increasing in `x̌ᵀθ_M`), the
/// θ-block maximizes the mean linear index, and `value` is the sample
/// average of `μ` at the returned pair.
pub fn solve_robust_oro_arm<R: Rng + ?Sized>(
    p: &OroProblem<'_>,
    deviations: &[Vector],
    link: &LinkFn,
    rng: &mut R,
) -> Result<OroSolution, SolverError> {
    p.validate()?;
    if deviations.is_empty() {
        return solve_oro_arm(p, rng);
    }
    let d_m = p.context.dim_mutable();
    if let Some(bad) = deviations.iter().find(|e| e.len() != d_m) {
        return Err(SolverError::DimensionMismatch {
            expected: d_m,
            actual: bad.len(),
        });
    }
    let mean = deviations.iter().fold(Vector::zeros(d_m), |acc, e| acc + e) / deviations.len() as f64;
    let shifted = p.context.with_mutable(&p.context.mutable + &mean);
    let sp = OroProblem {
        context: &shifted,
        ..*p
    };
    let mut sol = best_of_restarts(&sp, 0.0, rng)?.0;
    sol.recourse -= &mean;
    if let LinkFn::Logistic { .. } = link {
        let (ti, tm) = split(&sol.theta, p.context.dim_immutable());
        let base = p.context.immutable.dot(&ti) + sol.recourse.dot(&tm);
        sol.value = deviations.iter().map(|e| link.mean(base + e.dot(&tm))).sum::<f64>()
            / deviations.len() as f64;
    }
    Ok(sol)
}

/// Run [`solve_oro_arm`] on every arm and keep the highest value (ties to
/// the lowest index).
pub fn solve_oro_best<R: Rng + ?Sized>(
    arms: &[ArmModel],
    x: &Context,
    gamma: f64,
    norm: &NormSpec,
    params: SolverParams,
    rng: &mut R,
) -> Result<(usize, OroSolution), SolverError> {
    let mut best: Option<(usize, OroSolution)> = None;
    for (a, arm) in arms.iter().enumerate() {
        let p = OroProblem {
            context: x,
            gamma,
            norm,
            set: arm.ellipsoid(),
            params,
        };
        let sol = solve_oro_arm(&p, rng)?;
        if best.as_ref().is_none_or(|(_, b)| sol.value > b.value) {
            best = Some((a, sol));
        }
    }
    best.ok_or(SolverError::EmptyArms)
}
