use serde::{Deserialize, Serialize};

use crate::geometry::Vector;

/// A context split into its immutable block `x_I` and mutable block `x_M`.
///
/// Learners and true parameters always use the concatenated layout
/// `(x_I, x_M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub immutable: Vector,
    pub mutable: Vector,
}

impl Context {
    pub fn new(immutable: Vector, mutable: Vector) -> Self {
        Self { immutable, mutable }
    }

    pub fn dim(&self) -> usize {
        self.immutable.len() + self.mutable.len()
    }

    pub fn dim_immutable(&self) -> usize {
        self.immutable.len()
    }

    pub fn dim_mutable(&self) -> usize {
        self.mutable.len()
    }

    /// Concatenated `(x_I, x_M)`.
    pub fn full(&self) -> Vector {
        concat(&self.immutable, &self.mutable)
    }

    /// Same immutable block, mutable block replaced.
    pub fn with_mutable(&self, mutable: Vector) -> Self {
        Self {
            immutable: self.immutable.clone(),
            mutable,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.immutable.iter().chain(self.mutable.iter()).all(|x| x.is_finite())
    }
}

pub(crate) fn concat(a: &Vector, b: &Vector) -> Vector {
    Vector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// Split a parameter in `(θ_I, θ_M)` layout at `d_i`.
pub(crate) fn split(theta: &Vector, d_i: usize) -> (Vector, Vector) {
    let d = theta.len();
    (
        theta.rows(0, d_i).into_owned(),
        theta.rows(d_i, d - d_i).into_owned(),
    )
}
