//! Computational core for formal maps between noncommutative domains:
//! sparse truncated power series in noncommuting indeterminates, their
//! compositional calculus and inversion, evaluation on matrix tuples, and
//! the operator models (shifts, kernels, characteristic functions,
//! curvature, interpolation) attached to the domains such maps define.

pub mod calculus;
pub mod cmatrix;
mod dense;
pub mod error;
pub mod eval;
pub mod instances;
pub mod interp;
pub mod json;
pub mod invariants;
pub mod model;
pub mod series;
pub mod word;

pub use cmatrix::{CMatrix, PsdReport};
pub use error::{Error, Result};
pub use series::{NCSeries, NCTuple};
pub use word::Word;

/// Three-valued outcome of a numerical decision procedure: decisively
/// established, decisively refuted, or undetermined at the precision and
/// degree that were available.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}
