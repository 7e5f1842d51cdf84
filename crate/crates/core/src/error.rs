//! Shared error type for domain failures.
//!
//! Every constructor and operation that can reject bad input reports through
//! [`CoreError`]; panics are reserved for internal invariant violations.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    /// Division by an exactly-zero scalar (or inversion of one).
    #[error("division by zero")]
    DivisionByZero,

    /// An operation mixed objects over different Weyl algebras / spaces.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Construction data violated a structural invariant (degrees, symmetry,
    /// nondegeneracy, ...).  The message names the violated constraint.
    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    /// A linear-algebra step needed an invertible matrix and did not get one.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// Quasi-modular recognition could not decide at the supplied order.
    /// Distinct from a definite failure: raising the q-order may resolve it.
    #[error("undecidable at this order: {0}")]
    UndecidableAtOrder(String),

    /// Quasi-modular recognition definitely failed; carries a printable
    /// residual witness.
    #[error("not quasi-modular of the requested weight: residual {0}")]
    NotQuasiModular(String),

    /// Parse error with 1-based line/column position.
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    /// A domain precondition failed (documented per operation).
    #[error("domain error: {0}")]
    Domain(String),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidStructure(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        CoreError::Domain(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        CoreError::DimensionMismatch(msg.into())
    }

    pub fn singular(msg: impl Into<String>) -> Self {
        CoreError::SingularMatrix(msg.into())
    }
}

pub type CoreResult<T> = Result<T, CoreError>;
