//! Generalized-linear reward model.
//!
//! Each arm keeps a ridge-regularized maximum-likelihood estimate `θ̂`, its
//! design matrix `V = λI + Σ x xᵀ` and a confidence radius `ρ`, which
//! together define the ellipsoid `{θ : ‖θ − θ̂‖_V ≤ ρ}`.
//!
//! The per-observation loss is `m(xᵀθ) − r·xᵀθ` with `m′ = μ`, whose
//! gradient is `(μ(xᵀθ) − r)·x`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("newton iterations did not converge (gradient norm {grad_norm:e})")]
    NonConvergence { grad_norm: f64 },

    #[error("design matrix is not positive-definite")]
    NotPositiveDefinite,

    #[error("invalid glm configuration: {0}")]
    InvalidConfig(String),
}

/// Strictly increasing link `μ` with its Lipschitz constant `L_μ` and
/// curvature floor `c_μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "link", rename_all = "snake_case")]
pub enum LinkFn {
    Identity,
    /// `c_mu` is the curvature floor used in the confidence radius. The
    /// logistic derivative has infimum 0 on the real line, so the value is
    /// taken over the reachable slab (see [`LinkFn::logistic_for_slab`]).
    Logistic { c_mu: f64 },
}

impl LinkFn {
    /// Logistic link with `c_μ = μ′(β_X·β_Θ)`.
    pub fn logistic_for_slab(beta_x: f64, beta_theta: f64) -> Self {
        let (_, d) = logistic(beta_x * beta_theta);
        LinkFn::Logistic { c_mu: d }
    }

    /// `(μ(z), μ′(z))`.
    pub fn eval(&self, z: f64) -> (f64, f64) {
        match self {
            LinkFn::Identity => (z, 1.0),
            LinkFn::Logistic { .. } => logistic(z),
        }
    }

    pub fn mean(&self, z: f64) -> f64 {
        self.eval(z).0
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            LinkFn::Identity => 1.0,
            LinkFn::Logistic { .. } => 0.25,
        }
    }

    pub fn curvature_floor(&self) -> f64 {
        match self {
            LinkFn::Identity => 1.0,
            LinkFn::Logistic { c_mu } => *c_mu,
        }
    }

    /// Antiderivative `m` of the link.
    fn potential(&self, z: f64) -> f64 {
        match self {
            LinkFn::Identity => 0.5 * z * z,
            LinkFn::Logistic { .. } => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LinkFn::Identity => "identity",
            LinkFn::Logistic { .. } => "logistic",
        }
    }
}

fn logistic(z: f64) -> (f64, f64) {
    let v = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    (v, v * (1.0 - v))
}

/// Statistical constants of the confidence set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmConfig {
    pub lambda: f64,
    pub sigma: f64,
    pub beta_x: f64,
    pub beta_theta: f64,
    pub delta: f64,
    /// Number of arms `K` in the union bound.
    pub arms: usize,
    /// Multiplier on the theoretical radius; 1 reproduces it exactly.
    pub radius_scale: f64,
}

impl Default for GlmConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sigma: 1.0,
            beta_x: 1.0,
            beta_theta: 1.0,
            delta: 0.1,
            arms: 1,
            radius_scale: 1.0,
        }
    }
}

impl GlmConfig {
    pub fn validate(&self) -> Result<(), GlmError> {
        let positive = [
            ("lambda", self.lambda),
            ("sigma", self.sigma),
            ("beta_x", self.beta_x),
            ("beta_theta", self.beta_theta),
            ("radius_scale", self.radius_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(GlmError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(GlmError::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.arms == 0 {
            return Err(GlmError::InvalidConfig("at least one arm is required".into()));
        }
        Ok(())
    }
}

/// `ρ = c_ρ/c_μ · (σ√(d·log(1 + β_X² n/λ) + d·log(K/δ)) + √λ·β_Θ)`.
pub fn confidence_radius(cfg: &GlmConfig, link: &LinkFn, d: usize, n: usize) -> f64 {
    let d = d as f64;
    let growth = d * (1.0 + cfg.beta_x * cfg.beta_x * n as f64 / cfg.lambda).ln();
    let union = d * (cfg.arms as f64 / cfg.delta).ln();
    let stat = cfg.sigma * (growth + union).max(0.0).sqrt();
    cfg.radius_scale / link.curvature_floor() * (stat + cfg.lambda.sqrt() * cfg.beta_theta)
}

/// `√(xᵀV⁻¹x)` via a Cholesky solve.
pub fn vnorm_inv(v: &DMatrix<f64>, x: &Vector) -> Result<f64, GlmError> {
    if v.nrows() != x.len() || !v.is_square() {
        return Err(GlmError::DimensionMismatch {
            expected: v.nrows(),
            actual: x.len(),
        });
    }
    let chol = Cholesky::new(v.clone()).ok_or(GlmError::NotPositiveDefinite)?;
    Ok(x.dot(&chol.solve(x)).max(0.0).sqrt())
}

/// Regularized negative log-likelihood and its gradient.
fn loss_and_grad(history: &[(Vector, f64)], lambda: f64, link: &LinkFn, theta: &Vector) -> (f64, Vector) {
    let mut loss = 0.5 * lambda * theta.norm_squared();
    let mut grad = theta * lambda;
    for (x, r) in history {
        let z = x.dot(theta);
        loss += link.potential(z) - r * z;
        grad.axpy(link.mean(z) - r, x, 1.0);
    }
    (loss, grad)
}

fn check_history(history: &[(Vector, f64)], d: usize) -> Result<(), GlmError> {
    for (x, r) in history {
        if x.len() != d {
            return Err(GlmError::DimensionMismatch {
                expected: d,
                actual: x.len(),
            });
        }
        if !r.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite("history"));
        }
    }
    Ok(())
}

/// Regularized MLE from a zero start. `d` is taken from the first context;
/// an empty history yields the zero vector of length `dim`.
pub fn fit_mle(history: &[(Vector, f64)], dim: usize, lambda: f64, link: &LinkFn) -> Result<Vector, GlmError> {
    fit_mle_from(history, lambda, link, &Vector::zeros(dim))
}

/// Regularized MLE warm-started at `init`.
///
/// Identity link: closed-form ridge solve. Logistic: damped Newton with
/// backtracking until the gradient norm drops below `1e−8`, at most 100
/// iterations.
pub fn fit_mle_from(
    history: &[(Vector, f64)],
    lambda: f64,
    link: &LinkFn,
    init: &Vector,
) -> Result<Vector, GlmError> {
    let d = init.len();
    check_history(history, d)?;
    if !(lambda > 0.0) {
        return Err(GlmError::InvalidConfig("lambda must be positive".into()));
    }
    match link {
        LinkFn::Identity => {
            let mut v = DMatrix::identity(d, d) * lambda;
            let mut b = Vector::zeros(d);
            for (x, r) in history {
                v.ger(1.0, x, x, 1.0);
                b.axpy(*r, x, 1.0);
            }
            let chol = Cholesky::new(v).ok_or(GlmError::NotPositiveDefinite)?;
            Ok(chol.solve(&b))
        }
        LinkFn::Logistic { .. } => newton(history, lambda, link, init.clone()),
    }
}

const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 100;

fn newton(history: &[(Vector, f64)], lambda: f64, link: &LinkFn, mut theta: Vector) -> Result<Vector, GlmError> {
    let d = theta.len();
    let (mut loss, mut grad) = loss_and_grad(history, lambda, link, &theta);
    for _ in 0..NEWTON_MAX_ITER {
        if grad.norm() < NEWTON_TOL {
            return Ok(theta);
        }
        let mut hess = DMatrix::identity(d, d) * lambda;
        for (x, _) in history {
            let (_, w) = link.eval(x.dot(&theta));
            hess.ger(w, x, x, 1.0);
        }
        let chol = Cholesky::new(hess).ok_or(GlmError::NotPositiveDefinite)?;
        let step = chol.solve(&grad);
        let slope = grad.dot(&step);
        // Newton decrement below roundoff of the loss: stationary.
        if slope <= 1e-15 * loss.abs().max(1.0) {
            return Ok(theta);
        }
        let slack = 1e-13 * loss.abs().max(1.0);
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let (cl, cg) = loss_and_grad(history, lambda, link, &cand);
            if cl <= loss - 1e-4 * t * slope + slack || t < 1e-10 {
                theta = cand;
                loss = cl;
                grad = cg;
                break;
            }
            t *= 0.5;
        }
    }
    let grad_norm = grad.norm();
    if grad_norm < NEWTON_TOL {
        Ok(theta)
    } else {
        Err(GlmError::NonConvergence { grad_norm })
    }
}

/// Confidence ellipsoid `{θ : ‖θ − center‖_V ≤ radius}` with `V` kept in
/// factored form.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub center: Vector,
    pub chol: Cholesky<f64, Dyn>,
    pub radius: f64,
}

impl Ellipsoid {
    pub fn new(center: Vector, design: DMatrix<f64>, radius: f64) -> Result<Self, GlmError> {
        if design.nrows() != center.len() || !design.is_square() {
            return Err(GlmError::DimensionMismatch {
                expected: center.len(),
                actual: design.nrows(),
            });
        }
        let chol = Cholesky::new(design).ok_or(GlmError::NotPositiveDefinite)?;
        Ok(Self {
            center,
            chol,
            radius: radius.max(0.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `‖x‖_{V⁻¹}`.
    pub fn vnorm_inv(&self, x: &Vector) -> f64 {
        x.dot(&self.chol.solve(x)).max(0.0).sqrt()
    }

    /// `‖θ − center‖_V`.
    pub fn distance(&self, theta: &Vector) -> f64 {
        let diff = theta - &self.center;
        let l = self.chol.l();
        (l.transpose() * diff).norm()
    }

    /// Maximizer of `cᵀθ` over the ellipsoid: `center + ρ·V⁻¹c/‖c‖_{V⁻¹}`.
    /// When `c = 0` every point is optimal and the boundary point along the
    /// first coordinate is returned.
    pub fn support(&self, c: &Vector) -> Vector {
        let w = self.chol.solve(c);
        let s = c.dot(&w).max(0.0).sqrt();
        if s > 0.0 {
            &self.center + w * (self.radius / s)
        } else {
            let mut e = Vector::zeros(self.dim());
            if self.dim() > 0 {
                e[0] = 1.0;
                let step = self.distance(&(&self.center + &e));
                e /= step;
            }
            &self.center + e * self.radius
        }
    }
}

/// UCB/LCB pair and the width `ci = ucb − lcb`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub ucb: f64,
    pub lcb: f64,
    pub ci: f64,
}

/// Learned state of one arm.
#[derive(Debug, Clone)]
pub struct ArmModel {
    design: DMatrix<f64>,
    xty: Vector,
    history: Vec<(Vector, f64)>,
    set: Ellipsoid,
}

impl ArmModel {
    pub fn new(dim: usize, cfg: &GlmConfig, link: &LinkFn) -> Self {
        let design = DMatrix::identity(dim, dim) * cfg.lambda;
        let set = Ellipsoid {
            center: Vector::zeros(dim),
            chol: Cholesky::new(design.clone()).expect("λI is positive-definite"),
            radius: confidence_radius(cfg, link, dim, 0),
        };
        Self {
            design,
            xty: Vector::zeros(dim),
            history: Vec::new(),
            set,
        }
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn pulls(&self) -> usize {
        self.history.len()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn history(&self) -> &[(Vector, f64)] {
        &self.history
    }

    pub fn theta_hat(&self) -> &Vector {
        &self.set.center
    }

    pub fn rho(&self) -> f64 {
        self.set.radius
    }

    pub fn ellipsoid(&self) -> &Ellipsoid {
        &self.set
    }

    pub fn vnorm_inv(&self, x: &Vector) -> f64 {
        self.set.vnorm_inv(x)
    }

    pub fn ucb_lcb(&self, link: &LinkFn, x: &Vector) -> Result<Bounds, GlmError> {
        if x.len() != self.dim() {
            return Err(GlmError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let mean = link.mean(x.dot(&self.set.center));
        let width = link.lipschitz() * self.set.radius * self.vnorm_inv(x);
        Ok(Bounds {
            ucb: mean + width,
            lcb: mean - width,
            ci: 2.0 * width,
        })
    }

    /// Record `(x, r)`, update `V` and refit `θ̂` and `ρ`.
    pub fn update(&mut self, x: &Vector, r: f64, cfg: &GlmConfig, link: &LinkFn) -> Result<(), GlmError> {
        if x.len() != self.dim() {
            return Err(GlmError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if !r.is_finite() {
            return Err(GlmError::NonFinite("reward"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite("context"));
        }
        self.design.ger(1.0, x, x, 1.0);
        self.set.chol.rank_one_update(x, 1.0);
        self.xty.axpy(r, x, 1.0);
        self.history.push((x.clone(), r));
        self.set.center = match link {
            LinkFn::Identity => self.set.chol.solve(&self.xty),
            LinkFn::Logistic { .. } => fit_mle_from(&self.history, cfg.lambda, link, &self.set.center)?,
        };
        self.set.radius = confidence_radius(cfg, link, self.dim(), self.pulls());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn base_cfg() -> GlmConfig {
        GlmConfig {
            lambda: 1.0,
            sigma: 1.0,
            beta_x: 1.0,
            beta_theta: 1.0,
            delta: 0.1,
            arms: 2,
            radius_scale: 1.0,
        }
    }

    #[test]
    fn link_examples() {
        assert_eq!(LinkFn::Identity.eval(2.5), (2.5, 1.0));
        let lg = LinkFn::Logistic { c_mu: 0.1 };
        assert_eq!(lg.eval(0.0), (0.5, 0.25));
        let (m, d) = lg.eval(3f64.ln());
        assert_abs_diff_eq!(m, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 0.1875, epsilon = 1e-15);
        // Extreme arguments stay finite.
        assert!(lg.eval(-800.0).0 >= 0.0 && lg.eval(800.0).0 <= 1.0);
    }

    #[test]
    fn mle_examples() {
        let empty: Vec<(Vector, f64)> = vec![];
        assert_eq!(fit_mle(&empty, 2, 1.0, &LinkFn::Identity).unwrap(), Vector::zeros(2));
        let h = vec![(v(&[1.0, 0.0]), 2.0)];
        assert_abs_diff_eq!(fit_mle(&h, 2, 1.0, &LinkFn::Identity).unwrap(), v(&[1.0, 0.0]), epsilon = 1e-12);
        let h = vec![(v(&[1.0]), 0.5)];
        let th = fit_mle(&h, 1, 1.0, &LinkFn::Logistic { c_mu: 0.1 }).unwrap();
        assert_abs_diff_eq!(th[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn radius_examples() {
        let cfg = base_cfg();
        // Independent evaluation of the closed form.
        let r0 = (2.0 * 20f64.ln()).sqrt() + 1.0;
        let r10 = (2.0 * 11f64.ln() + 2.0 * 20f64.ln()).sqrt() + 1.0;
        assert_abs_diff_eq!(confidence_radius(&cfg, &LinkFn::Identity, 2, 0), r0, epsilon = 1e-12);
        assert_abs_diff_eq!(confidence_radius(&cfg, &LinkFn::Identity, 2, 0), 3.4478, epsilon = 1e-4);
        assert_abs_diff_eq!(confidence_radius(&cfg, &LinkFn::Identity, 2, 10), r10, epsilon = 1e-12);
        assert_abs_diff_eq!(confidence_radius(&cfg, &LinkFn::Identity, 2, 10), 4.28440, epsilon = 1e-4);
        let quiet = GlmConfig {
            sigma: 1e-12,
            lambda: 1e-6,
            beta_theta: 3.0,
            ..cfg
        };
        let lim = confidence_radius(&quiet, &LinkFn::Identity, 2, 10);
        assert_abs_diff_eq!(lim, 1e-3 * 3.0, epsilon = 1e-9);
    }

    #[test]
    fn radius_is_monotone() {
        let cfg = base_cfg();
        let id = LinkFn::Identity;
        let mut last = 0.0;
        for n in 0..200 {
            let r = confidence_radius(&cfg, &id, 3, n);
            assert!(r >= last);
            last = r;
        }
        for d in 1..10 {
            assert!(confidence_radius(&cfg, &id, d + 1, 5) >= confidence_radius(&cfg, &id, d, 5));
        }
        let noisier = GlmConfig { sigma: 2.0, ..cfg };
        let wider = GlmConfig { beta_theta: 2.0, ..cfg };
        assert!(confidence_radius(&noisier, &id, 3, 5) >= confidence_radius(&cfg, &id, 3, 5));
        assert!(confidence_radius(&wider, &id, 3, 5) >= confidence_radius(&cfg, &id, 3, 5));
    }

    #[test]
    fn vnorm_examples() {
        assert_abs_diff_eq!(vnorm_inv(&DMatrix::identity(2, 2), &v(&[3.0, 4.0])).unwrap(), 5.0, epsilon = 1e-12);
        let d41 = DMatrix::from_diagonal(&v(&[4.0, 1.0]));
        assert_abs_diff_eq!(vnorm_inv(&d41, &v(&[2.0, 0.0])).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vnorm_inv(&d41, &v(&[0.0, 3.0])).unwrap(), 3.0, epsilon = 1e-12);
        let singular = DMatrix::zeros(2, 2);
        assert_eq!(vnorm_inv(&singular, &v(&[1.0, 0.0])), Err(GlmError::NotPositiveDefinite));
    }

    fn arm_with(theta: Vector, rho: f64) -> ArmModel {
        let d = theta.len();
        ArmModel {
            design: DMatrix::identity(d, d),
            xty: Vector::zeros(d),
            history: vec![],
            set: Ellipsoid::new(theta, DMatrix::identity(d, d), rho).unwrap(),
        }
    }

    #[test]
    fn ucb_lcb_examples() {
        let b = arm_with(Vector::zeros(2), 2.0).ucb_lcb(&LinkFn::Identity, &v(&[1.0, 0.0])).unwrap();
        assert_eq!((b.ucb, b.lcb, b.ci), (2.0, -2.0, 4.0));
        let b = arm_with(v(&[0.3, -0.2]), 0.0).ucb_lcb(&LinkFn::Identity, &v(&[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(b.ucb, 0.1, epsilon = 1e-15);
        assert_eq!(b.ucb, b.lcb);
        assert_eq!(b.ci, 0.0);
        let b = arm_with(v(&[1.0, 0.0]), 1.0).ucb_lcb(&LinkFn::Identity, &v(&[0.0, 2.0])).unwrap();
        assert_eq!((b.ucb, b.lcb, b.ci), (2.0, -2.0, 4.0));
    }

    #[test]
    fn ci_is_exactly_twice_the_scaled_width() {
        let cfg = base_cfg();
        let link = LinkFn::Logistic { c_mu: 0.2 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut arm = ArmModel::new(3, &cfg, &link);
        for _ in 0..20 {
            let x = Vector::from_fn(3, |_, _| rng.sample(StandardNormal));
            arm.update(&x, if rng.random::<bool>() { 1.0 } else { 0.0 }, &cfg, &link).unwrap();
        }
        let x = v(&[0.3, -1.0, 2.0]);
        let b = arm.ucb_lcb(&link, &x).unwrap();
        let direct = 2.0 * link.lipschitz() * arm.rho() * vnorm_inv(arm.design(), &x).unwrap();
        assert_abs_diff_eq!(b.ci, direct, epsilon = 1e-12);
    }

    #[test]
    fn update_examples() {
        let cfg = base_cfg();
        let mut arm = ArmModel::new(2, &cfg, &LinkFn::Identity);
        arm.update(&v(&[1.0, 0.0]), 2.0, &cfg, &LinkFn::Identity).unwrap();
        assert_abs_diff_eq!(arm.theta_hat().clone(), v(&[1.0, 0.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(arm.design().clone(), DMatrix::from_diagonal(&v(&[2.0, 1.0])), epsilon = 1e-12);
        assert_eq!(arm.pulls(), 1);
        assert_eq!(arm.rho(), confidence_radius(&cfg, &LinkFn::Identity, 2, 1));

        assert_eq!(
            arm.update(&v(&[1.0, 0.0]), f64::NAN, &cfg, &LinkFn::Identity),
            Err(GlmError::NonFinite("reward"))
        );
        assert_eq!(arm.pulls(), 1);
    }

    #[test]
    fn sequential_updates_match_batch_refit() {
        let cfg = base_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for link in [LinkFn::Identity, LinkFn::Logistic { c_mu: 0.1 }] {
            let mut arm = ArmModel::new(4, &cfg, &link);
            let mut hist = vec![];
            for i in 0..60 {
                let x = Vector::from_fn(4, |_, _| rng.sample(StandardNormal));
                let r = match link {
                    LinkFn::Identity => rng.sample::<f64, _>(StandardNormal),
                    _ => (i % 2) as f64,
                };
                arm.update(&x, r, &cfg, &link).unwrap();
                hist.push((x, r));
            }
            let mut v = DMatrix::identity(4, 4) * cfg.lambda;
            for (x, _) in &hist {
                v += x * x.transpose();
            }
            assert!((&v - arm.design()).norm() < 1e-9);
            let batch = fit_mle(&hist, 4, cfg.lambda, &link).unwrap();
            assert!((&batch - arm.theta_hat()).norm() < 1e-7);
            // Cached factorization still agrees with the explicit matrix.
            let x = Vector::from_fn(4, |_, _| rng.sample(StandardNormal));
            assert_abs_diff_eq!(arm.vnorm_inv(&x), vnorm_inv(&v, &x).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn mle_gradient_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..30 {
            let d = 1 + trial % 5;
            let n = 5 + 7 * trial;
            let theta_true = Vector::from_fn(d, |_, _| rng.sample(StandardNormal));
            let logistic = LinkFn::Logistic { c_mu: 0.1 };
            for link in [LinkFn::Identity, logistic] {
                let hist: Vec<(Vector, f64)> = (0..n)
                    .map(|_| {
                        let x = Vector::from_fn(d, |_, _| rng.sample(StandardNormal));
                        let p = link.mean(x.dot(&theta_true));
                        let r = match link {
                            LinkFn::Identity => p + rng.sample::<f64, _>(StandardNormal),
                            _ => (rng.random::<f64>() < p) as u8 as f64,
                        };
                        (x, r)
                    })
                    .collect();
                let th = fit_mle(&hist, d, 0.7, &link).unwrap();
                let (_, g) = loss_and_grad(&hist, 0.7, &link, &th);
                assert!(g.norm() < 1e-6, "gradient {} for {:?}", g.norm(), link);
            }
        }
    }

    #[test]
    fn ellipsoid_support_is_on_boundary_and_optimal() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let e = Ellipsoid::new(Vector::from_row_slice(&[0.1, -0.3]), v, 1.5).unwrap();
        let c = Vector::from_row_slice(&[1.0, 2.0]);
        let th = e.support(&c);
        assert_abs_diff_eq!(e.distance(&th), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.dot(&th), c.dot(&e.center) + 1.5 * e.vnorm_inv(&c), epsilon = 1e-12);
        let z = e.support(&Vector::zeros(2));
        assert_abs_diff_eq!(e.distance(&z), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(base_cfg().validate().is_ok());
        assert!(GlmConfig { delta: 1.0, ..base_cfg() }.validate().is_err());
        assert!(GlmConfig { lambda: 0.0, ..base_cfg() }.validate().is_err());
        assert!(GlmConfig { arms: 0, ..base_cfg() }.validate().is_err());
    }
}
