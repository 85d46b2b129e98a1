//! Error taxonomy shared by every module in the crate.
//!
//! Variants are split along the line the CLI cares about: malformed or
//! out-of-contract *inputs* (shape, index, capacity, precondition violations)
//! versus *numerical* failures discovered mid-computation (singularity,
//! indefiniteness, divergent resolvents, cross-check disagreement).

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes or counts do not conform (dimensions, variable counts).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A variable or letter index lies outside the valid range.
    #[error("index out of range: {0}")]
    Index(String),

    /// An enumeration would exceed the configured word cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A linear solve hit a (numerically) singular matrix.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// An operation requiring a Hermitian matrix received one that is not.
    #[error("not Hermitian: {0}")]
    NotHermitian(String),

    /// A matrix required to be positive semidefinite is decisively indefinite.
    #[error("not positive semidefinite: {0}")]
    NotPsd(String),

    /// A series tuple fails the invertibility criterion.
    #[error("not invertible: {0}")]
    NotInvertible(String),

    /// Composition attempted with a nonzero inner constant term and a
    /// non-polynomial outer factor.
    #[error("constant-term violation: {0}")]
    ConstantTerm(String),

    /// A point sits on or outside the boundary where a kernel or defect
    /// degenerates.
    #[error("boundary point: {0}")]
    Boundary(String),

    /// A tuple falls outside the closed domain (defect decisively indefinite).
    #[error("not in closed domain: {0}")]
    NotInDomain(String),

    /// The Neumann series for a resolvent does not converge and the operator
    /// is not nilpotent.
    #[error("resolvent not summable: {0}")]
    ResolventNotSummable(String),

    /// Two independent computational routes disagreed beyond tolerance.
    #[error("internal inconsistency: {0}")]
    Inconsistency(String),

    /// Malformed input data (parsing, invalid values, broken invariants).
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    /// True when the error reflects bad input rather than a numerical failure
    /// discovered during computation. The CLI maps this to exit code 2
    /// (versus 3 for numerical failures).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::Index(_)
                | Error::Capacity(_)
                | Error::ConstantTerm(_)
                | Error::Invalid(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
