//! Contextual bandits that choose a treatment arm together with a bounded
//! modification ("recourse") of the mutable part of the context.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advisors;
pub mod context;
pub mod environments;
pub mod geometry;
pub mod glm;
pub mod harness;
pub mod policies;
pub mod solver;

pub use context::Context;
pub use geometry::{NormSpec, Vector};
