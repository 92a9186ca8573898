//! Norms on the mutable-feature space.
//!
//! Every recourse formula in this crate reduces to three primitives of a
//! norm `‖·‖`: its value, its dual `‖v‖_⋆ = max{⟨u, v⟩ : ‖u‖ ≤ 1}`, and a
//! maximizer of that dual problem (a subgradient of the dual norm at `v`).
//! Four families are supported:
//!
//! | kind            | `‖v‖`               | `‖v‖_⋆`            |
//! |-----------------|---------------------|--------------------|
//! | `L1`            | `Σ|v_i|`            | `max|v_i|`         |
//! | `L2`            | `√(vᵀv)`            | `√(vᵀv)`           |
//! | `WeightedLinf`  | `max α_i|v_i|`      | `Σ|v_i|/α_i`       |
//! | `Mahalanobis`   | `√(vᵀAv)`           | `√(vᵀA⁻¹v)`        |

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense real vector used for contexts, parameters and recourses.
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("weighted l-infinity weights must be finite and strictly positive")]
    InvalidWeights,

    #[error("matrix is not symmetric positive-definite")]
    NotPositiveDefinite,

    #[error("matrix must be square and symmetric")]
    NotSymmetric,

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("unknown norm kind `{0}`")]
    UnknownKind(String),

    #[error("norm kind `{kind}` requires field `{field}`")]
    MissingField { kind: &'static str, field: &'static str },
}

#[derive(Debug, Clone)]
enum Kind {
    L1,
    L2,
    WeightedLinf(Vector),
    Mahalanobis {
        matrix: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
}

/// A norm family together with whatever it needs cached for evaluation.
///
/// Immutable after construction, so it can be shared freely across threads.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NormSpecRepr", into = "NormSpecRepr")]
pub struct NormSpec {
    kind: Kind,
}

impl PartialEq for NormSpec {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (Kind::L1, Kind::L1) | (Kind::L2, Kind::L2) => true,
            (Kind::WeightedLinf(a), Kind::WeightedLinf(b)) => a == b,
            (Kind::Mahalanobis { matrix: a, .. }, Kind::Mahalanobis { matrix: b, .. }) => a == b,
            _ => false,
        }
    }
}

impl NormSpec {
    pub fn l1() -> Self {
        Self { kind: Kind::L1 }
    }

    pub fn l2() -> Self {
        Self { kind: Kind::L2 }
    }

    pub fn weighted_linf(weights: Vector) -> Result<Self, GeometryError> {
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(GeometryError::InvalidWeights);
        }
        Ok(Self {
            kind: Kind::WeightedLinf(weights),
        })
    }

    /// Mahalanobis norm `√(vᵀAv)`; `A` must be symmetric positive-definite.
    pub fn mahalanobis(matrix: DMatrix<f64>) -> Result<Self, GeometryError> {
        if !matrix.is_square() {
            return Err(GeometryError::NotSymmetric);
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("mahalanobis matrix"));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(GeometryError::NotSymmetric);
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(GeometryError::NotPositiveDefinite)?;
        Ok(Self {
            kind: Kind::Mahalanobis { matrix, chol },
        })
    }

    /// Fixed dimension of the norm, if the family carries one.
    pub fn dim(&self) -> Option<usize> {
        match &self.kind {
            Kind::L1 | Kind::L2 => None,
            Kind::WeightedLinf(w) => Some(w.len()),
            Kind::Mahalanobis { matrix, .. } => Some(matrix.nrows()),
        }
    }

    pub fn name(&self) -> &'static str {
        match &self.kind {
            Kind::L1 => "l1",
            Kind::L2 => "l2",
            Kind::WeightedLinf(_) => "winf",
            Kind::Mahalanobis { .. } => "mahalanobis",
        }
    }

    fn check(&self, v: &Vector) -> Result<(), GeometryError> {
        match self.dim() {
            Some(d) if d != v.len() => Err(GeometryError::DimensionMismatch {
                expected: d,
                actual: v.len(),
            }),
            _ => Ok(()),
        }
    }

    /// `‖v‖`.
    pub fn norm_value(&self, v: &Vector) -> Result<f64, GeometryError> {
        self.check(v)?;
        Ok(match &self.kind {
            Kind::L1 => v.iter().map(|x| x.abs()).sum(),
            Kind::L2 => v.norm(),
            Kind::WeightedLinf(w) => v
                .iter()
                .zip(w.iter())
                .map(|(x, a)| a * x.abs())
                .fold(0.0, f64::max),
            Kind::Mahalanobis { matrix, .. } => v.dot(&(matrix * v)).max(0.0).sqrt(),
        })
    }

    /// `‖v‖_⋆ = max{⟨u, v⟩ : ‖u‖ ≤ 1}`.
    pub fn dual_norm_value(&self, v: &Vector) -> Result<f64, GeometryError> {
        self.check(v)?;
        Ok(match &self.kind {
            Kind::L1 => v.amax(),
            Kind::L2 => v.norm(),
            Kind::WeightedLinf(w) => v.iter().zip(w.iter()).map(|(x, a)| x.abs() / a).sum(),
            Kind::Mahalanobis { chol, .. } => v.dot(&chol.solve(v)).max(0.0).sqrt(),
        })
    }

    /// A maximizer `u` of `⟨u, v⟩` over the unit ball, i.e. an element of
    /// `∂‖v‖_⋆`. At `v = 0` every feasible `u` is optimal and the first
    /// standard basis vector, scaled onto the unit sphere, is returned.
    /// Ties between coordinates of equal magnitude (ℓ1 case) go to the
    /// lowest index.
    pub fn dual_subgradient(&self, v: &Vector) -> Result<Vector, GeometryError> {
        self.check(v)?;
        let n = v.len();
        if n == 0 {
            return Ok(Vector::zeros(0));
        }
        if v.iter().all(|x| *x == 0.0) {
            return Ok(self.fallback_direction(n));
        }
        Ok(match &self.kind {
            Kind::L1 => {
                let mut best = 0;
                for i in 1..n {
                    if v[i].abs() > v[best].abs() {
                        best = i;
                    }
                }
                let mut u = Vector::zeros(n);
                u[best] = v[best].signum();
                u
            }
            Kind::L2 => v / v.norm(),
            Kind::WeightedLinf(w) => Vector::from_iterator(
                n,
                v.iter().zip(w.iter()).map(|(x, a)| sign(*x) / a),
            ),
            Kind::Mahalanobis { chol, .. } => {
                let s = chol.solve(v);
                let q = v.dot(&s).max(0.0).sqrt();
                s / q
            }
        })
    }

    /// First basis vector rescaled to unit norm under this spec.
    pub fn fallback_direction(&self, n: usize) -> Vector {
        let mut e = Vector::zeros(n);
        if n == 0 {
            return e;
        }
        e[0] = 1.0;
        let scale = match &self.kind {
            Kind::L1 | Kind::L2 => 1.0,
            Kind::WeightedLinf(w) => w[0],
            Kind::Mahalanobis { matrix, .. } => matrix[(0, 0)].sqrt(),
        };
        e / scale
    }

    /// Euclidean projection of `point` onto `{z : ‖z − center‖ ≤ radius}`.
    pub fn project_to_ball(
        &self,
        center: &Vector,
        radius: f64,
        point: &Vector,
    ) -> Result<Vector, GeometryError> {
        if center.len() != point.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: center.len(),
                actual: point.len(),
            });
        }
        self.check(point)?;
        let radius = radius.max(0.0);
        let offset = point - center;
        if self.norm_value(&offset)? <= radius {
            return Ok(point.clone());
        }
        if radius == 0.0 {
            return Ok(center.clone());
        }
        let projected = match &self.kind {
            Kind::L2 => &offset * (radius / offset.norm()),
            Kind::L1 => project_l1(&offset, radius),
            Kind::WeightedLinf(w) => Vector::from_iterator(
                offset.len(),
                offset
                    .iter()
                    .zip(w.iter())
                    .map(|(x, a)| x.clamp(-radius / a, radius / a)),
            ),
            Kind::Mahalanobis { matrix, .. } => project_ellipsoid(matrix, &offset, radius),
        };
        Ok(center + projected)
    }

    /// Largest Euclidean length of a vector in the unit ball of this norm.
    pub fn euclidean_reach(&self) -> f64 {
        match &self.kind {
            Kind::L1 | Kind::L2 => 1.0,
            Kind::WeightedLinf(w) => w.iter().map(|a| 1.0 / (a * a)).sum::<f64>().sqrt(),
            Kind::Mahalanobis { matrix, .. } => {
                let eig = SymmetricEigen::new(matrix.clone());
                1.0 / eig.eigenvalues.min().sqrt()
            }
        }
    }

    /// Draw uniformly from the ball of the given radius around the origin.
    pub fn sample_uniform_ball<R: Rng + ?Sized>(&self, n: usize, radius: f64, rng: &mut R) -> Vector {
        if n == 0 {
            return Vector::zeros(0);
        }
        let u: f64 = rng.random();
        let shrink = u.powf(1.0 / n as f64);
        match &self.kind {
            Kind::L2 => gaussian_on_sphere(n, rng) * (radius * shrink),
            Kind::L1 => {
                // Exponential spacings give a uniform point of the simplex.
                let e: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = e.iter().sum();
                Vector::from_iterator(
                    n,
                    e[..n].iter().map(|x| {
                        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        s * radius * x / total
                    }),
                )
            }
            Kind::WeightedLinf(w) => Vector::from_iterator(
                n,
                w.iter().map(|a| radius / a * rng.random_range(-1.0..=1.0)),
            ),
            Kind::Mahalanobis { chol, .. } => {
                // z uniform in the Euclidean ball, then x = L⁻ᵀ z has xᵀAx = zᵀz.
                let z = gaussian_on_sphere(n, rng) * (radius * shrink);
                chol.l().transpose().solve_upper_triangular(&z).unwrap_or(z)
            }
        }
    }

    /// Uniform direction on the unit sphere of this norm, scaled by a
    /// radius drawn uniformly from `[0, radius]`.
    pub fn sample_uniform_radius<R: Rng + ?Sized>(&self, n: usize, radius: f64, rng: &mut R) -> Vector {
        if n == 0 {
            return Vector::zeros(0);
        }
        let dir = gaussian_on_sphere(n, rng);
        let len = self.norm_value(&dir).unwrap_or(1.0);
        let r: f64 = rng.random_range(0.0..=radius.max(0.0));
        if len > 0.0 {
            dir * (r / len)
        } else {
            self.fallback_direction(n) * r
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn gaussian_on_sphere<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vector {
    loop {
        let g = Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        let len = g.norm();
        if len > 1e-12 {
            return g / len;
        }
    }
}

/// Sorted-threshold projection onto the ℓ1 ball of the given radius.
fn project_l1(v: &Vector, radius: f64) -> Vector {
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (j + 1) as f64;
        if *m > t {
            theta = t;
        }
    }
    v.map(|x| sign(x) * (x.abs() - theta).max(0.0))
}

/// Euclidean projection onto `{z : zᵀAz ≤ r²}` for `v` outside it. In the
/// eigenbasis of `A` the projection is `y_i / (1 + η λ_i)` with `η > 0` the
/// root of a decreasing secular function, found by bisection.
fn project_ellipsoid(a: &DMatrix<f64>, v: &Vector, radius: f64) -> Vector {
    let eig = SymmetricEigen::new(a.clone());
    let y = eig.eigenvectors.transpose() * v;
    let lam = &eig.eigenvalues;
    let r2 = radius * radius;
    let g = |eta: f64| -> f64 {
        y.iter()
            .zip(lam.iter())
            .map(|(yi, li)| li * (yi / (1.0 + eta * li)).powi(2))
            .sum::<f64>()
            - r2
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    while g(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
    }
    let z = Vector::from_iterator(
        y.len(),
        y.iter().zip(lam.iter()).map(|(yi, li)| yi / (1.0 + hi * li)),
    );
    &eig.eigenvectors * z
}

// ── Serialized form ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NormSpecRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<Vec<f64>>>,
}

impl TryFrom<NormSpecRepr> for NormSpec {
    type Error = GeometryError;

    fn try_from(r: NormSpecRepr) -> Result<Self, Self::Error> {
        match r.kind.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::l1()),
            "l2" => Ok(Self::l2()),
            "winf" | "weighted_linf" => {
                let w = r.weights.ok_or(GeometryError::MissingField {
                    kind: "winf",
                    field: "weights",
                })?;
                Self::weighted_linf(Vector::from_vec(w))
            }
            "mahalanobis" => {
                let rows = r.matrix.ok_or(GeometryError::MissingField {
                    kind: "mahalanobis",
                    field: "matrix",
                })?;
                let n = rows.len();
                if rows.iter().any(|row| row.len() != n) {
                    return Err(GeometryError::NotSymmetric);
                }
                Self::mahalanobis(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
            other => Err(GeometryError::UnknownKind(other.to_string())),
        }
    }
}

impl From<NormSpec> for NormSpecRepr {
    fn from(n: NormSpec) -> Self {
        let kind = n.name().to_string();
        match n.kind {
            Kind::L1 | Kind::L2 => Self {
                kind,
                weights: None,
                matrix: None,
            },
            Kind::WeightedLinf(w) => Self {
                kind,
                weights: Some(w.iter().copied().collect()),
                matrix: None,
            },
            Kind::Mahalanobis { matrix, .. } => Self {
                kind,
                weights: None,
                matrix: Some(
                    (0..matrix.nrows())
                        .map(|i| matrix.row(i).iter().copied().collect())
                        .collect(),
                ),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn winf12() -> NormSpec {
        NormSpec::weighted_linf(v(&[1.0, 2.0])).unwrap()
    }

    fn maha41() -> NormSpec {
        NormSpec::mahalanobis(DMatrix::from_diagonal(&v(&[4.0, 1.0]))).unwrap()
    }

    /// Brute-force max of ⟨u, v⟩ over the unit sphere of `spec` in 2-d.
    fn grid_dual_2d(spec: &NormSpec, x: &Vector) -> (f64, Vector) {
        let mut best = (f64::NEG_INFINITY, Vector::zeros(2));
        let steps = 20_000;
        for k in 0..steps {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / steps as f64;
            let d = v(&[ang.cos(), ang.sin()]);
            let u = &d / spec.norm_value(&d).unwrap();
            let val = u.dot(x);
            if val > best.0 {
                best = (val, u);
            }
        }
        best
    }

    #[test]
    fn norm_value_examples() {
        assert_abs_diff_eq!(NormSpec::l2().norm_value(&v(&[3.0, 4.0])).unwrap(), 5.0);
        assert_abs_diff_eq!(NormSpec::l1().norm_value(&v(&[-2.0, 5.0])).unwrap(), 7.0);
        // max(1·2, 2·5)
        assert_abs_diff_eq!(winf12().norm_value(&v(&[-2.0, 5.0])).unwrap(), 10.0);
    }

    #[test]
    fn dual_subgradient_examples() {
        let u = NormSpec::l2().dual_subgradient(&v(&[3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(u, v(&[0.6, 0.8]), epsilon = 1e-12);
        let (_, ug) = grid_dual_2d(&NormSpec::l2(), &v(&[3.0, 4.0]));
        assert_abs_diff_eq!(u, ug, epsilon = 1e-3);

        let u0 = NormSpec::l2().dual_subgradient(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(u0, v(&[1.0, 0.0]));

        let uw = winf12().dual_subgradient(&v(&[-2.0, 5.0])).unwrap();
        assert_abs_diff_eq!(uw, v(&[-1.0, 0.5]), epsilon = 1e-12);
        let (_, ug) = grid_dual_2d(&winf12(), &v(&[-2.0, 5.0]));
        assert_abs_diff_eq!(uw, ug, epsilon = 1e-3);
    }

    #[test]
    fn dual_norm_examples() {
        assert_abs_diff_eq!(NormSpec::l1().dual_norm_value(&v(&[-2.0, 5.0])).unwrap(), 5.0);
        assert_abs_diff_eq!(NormSpec::l2().dual_norm_value(&v(&[3.0, 4.0])).unwrap(), 5.0);
        assert_abs_diff_eq!(maha41().dual_norm_value(&v(&[2.0, 0.0])).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn l1_ties_go_to_lowest_index() {
        let u = NormSpec::l1().dual_subgradient(&v(&[-3.0, 3.0, 1.0])).unwrap();
        assert_eq!(u, v(&[-1.0, 0.0, 0.0]));
    }

    #[test]
    fn zero_fallback_is_feasible_for_every_family() {
        for spec in [NormSpec::l1(), NormSpec::l2(), winf12(), maha41()] {
            let u = spec.dual_subgradient(&Vector::zeros(2)).unwrap();
            assert_abs_diff_eq!(spec.norm_value(&u).unwrap(), 1.0, epsilon = 1e-12);
            assert!(u[0] > 0.0 && u[1] == 0.0);
        }
    }

    #[test]
    fn project_examples() {
        let z = Vector::zeros(2);
        let p = NormSpec::l2().project_to_ball(&z, 1.0, &v(&[3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(p, v(&[0.6, 0.8]), epsilon = 1e-12);
        let p = NormSpec::l2().project_to_ball(&z, 10.0, &v(&[3.0, 4.0])).unwrap();
        assert_eq!(p, v(&[3.0, 4.0]));
        let p = NormSpec::l1().project_to_ball(&z, 1.0, &v(&[2.0, 0.0])).unwrap();
        assert_abs_diff_eq!(p, v(&[1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn l1_projection_matches_dense_grid() {
        let spec = NormSpec::l1();
        let z = Vector::zeros(2);
        let target = v(&[0.7, 1.9]);
        let p = spec.project_to_ball(&z, 1.0, &target).unwrap();
        let mut best = (f64::INFINITY, Vector::zeros(2));
        let n = 800;
        for i in 0..=n {
            for j in 0..=n {
                let c = v(&[-1.0 + 2.0 * i as f64 / n as f64, -1.0 + 2.0 * j as f64 / n as f64]);
                if spec.norm_value(&c).unwrap() <= 1.0 {
                    let d = (&c - &target).norm();
                    if d < best.0 {
                        best = (d, c);
                    }
                }
            }
        }
        assert_abs_diff_eq!(p, best.1, epsilon = 5e-3);
    }

    #[test]
    fn mahalanobis_projection_is_nearest_point() {
        let spec = maha41();
        let c = v(&[0.5, -1.0]);
        let target = v(&[2.0, 1.0]);
        let p = spec.project_to_ball(&c, 1.0, &target).unwrap();
        assert_abs_diff_eq!(spec.norm_value(&(&p - &c)).unwrap(), 1.0, epsilon = 1e-9);
        // Any boundary point is at least as far from the target.
        for k in 0..3600 {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / 3600.0;
            let d = v(&[ang.cos(), ang.sin()]);
            let b = &c + &d / spec.norm_value(&d).unwrap();
            assert!((&b - &target).norm() >= (&p - &target).norm() - 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert_eq!(
            winf12().norm_value(&v(&[1.0, 2.0, 3.0])),
            Err(GeometryError::DimensionMismatch { expected: 2, actual: 3 })
        );
        assert!(NormSpec::l2().project_to_ball(&v(&[0.0]), 1.0, &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert_eq!(
            NormSpec::weighted_linf(v(&[1.0, 0.0])).unwrap_err(),
            GeometryError::InvalidWeights
        );
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(
            NormSpec::mahalanobis(indefinite).unwrap_err(),
            GeometryError::NotPositiveDefinite
        );
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(NormSpec::mahalanobis(asym).unwrap_err(), GeometryError::NotSymmetric);
    }

    #[test]
    fn serde_round_trip() {
        for spec in [NormSpec::l1(), NormSpec::l2(), winf12(), maha41()] {
            let text = serde_json::to_string(&spec).unwrap();
            let back: NormSpec = serde_json::from_str(&text).unwrap();
            assert_eq!(spec, back);
        }
        let parsed: NormSpec = serde_json::from_str(r#"{"kind":"winf","weights":[1,2]}"#).unwrap();
        assert_eq!(parsed, winf12());
        assert!(serde_json::from_str::<NormSpec>(r#"{"kind":"mahalanobis"}"#).is_err());
    }

    #[test]
    fn uniform_ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for spec in [NormSpec::l1(), NormSpec::l2(), winf12(), maha41()] {
            for _ in 0..2000 {
                let s = spec.sample_uniform_ball(2, 0.5, &mut rng);
                assert!(spec.norm_value(&s).unwrap() <= 0.5 + 1e-12);
                let r = spec.sample_uniform_radius(2, 0.5, &mut rng);
                assert!(spec.norm_value(&r).unwrap() <= 0.5 + 1e-12);
            }
        }
    }

    fn arb_spec(n: usize) -> impl Strategy<Value = NormSpec> {
        prop_oneof![
            Just(NormSpec::l1()),
            Just(NormSpec::l2()),
            prop::collection::vec(0.2f64..5.0, n)
                .prop_map(|w| NormSpec::weighted_linf(Vector::from_vec(w)).unwrap()),
            prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |e| {
                let b = DMatrix::from_vec(n, n, e);
                let a = &b * b.transpose() + DMatrix::identity(n, n) * 0.3;
                NormSpec::mahalanobis(a).unwrap()
            }),
        ]
    }

    fn spec_and_vecs() -> impl Strategy<Value = (NormSpec, Vec<f64>, Vec<f64>, f64)> {
        (1usize..5).prop_flat_map(|n| {
            (
                arb_spec(n),
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
                -5.0f64..5.0,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn norm_axioms((spec, a, b, c) in spec_and_vecs()) {
            let a = Vector::from_vec(a);
            let b = Vector::from_vec(b);
            let na = spec.norm_value(&a).unwrap();
            let nb = spec.norm_value(&b).unwrap();
            prop_assert!((spec.norm_value(&(&a * c)).unwrap() - c.abs() * na).abs() <= 1e-12 * (1.0 + na * c.abs()) * 10.0);
            prop_assert!(spec.norm_value(&(&a + &b)).unwrap() <= na + nb + 1e-12 * (1.0 + na + nb));
        }

        #[test]
        fn duality_consistency((spec, a, _b, _c) in spec_and_vecs()) {
            let a = Vector::from_vec(a);
            let u = spec.dual_subgradient(&a).unwrap();
            let dn = spec.dual_norm_value(&a).unwrap();
            prop_assert!((u.dot(&a) - dn).abs() <= 1e-9 * (1.0 + dn));
            prop_assert!(spec.norm_value(&u).unwrap() <= 1.0 + 1e-9);
        }

        #[test]
        fn projection_feasible_and_idempotent((spec, a, b, c) in spec_and_vecs()) {
            let center = Vector::from_vec(a);
            let point = Vector::from_vec(b);
            let r = c.abs();
            let p = spec.project_to_ball(&center, r, &point).unwrap();
            prop_assert!(spec.norm_value(&(&p - &center)).unwrap() <= r + 1e-9);
            let pp = spec.project_to_ball(&center, r, &p).unwrap();
            prop_assert!((&pp - &p).amax() <= 1e-9);
        }
    }

    #[test]
    fn dual_norm_matches_grid_in_two_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in [NormSpec::l1(), NormSpec::l2(), winf12(), maha41()] {
            for _ in 0..20 {
                let x = v(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
                let (g, _) = grid_dual_2d(&spec, &x);
                assert!((spec.dual_norm_value(&x).unwrap() - g).abs() < 1e-2);
            }
        }
    }
}
