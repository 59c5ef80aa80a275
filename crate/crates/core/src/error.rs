use std::fmt;

use crate::noma::{CellId, UserId};

/// Which of the two joint-transmission decoding conditions was broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JtCondition {
    /// A non-CoMP user is decoded before a CoMP user in some cluster.
    CompFirst = 1,
    /// CoMP users appear in different relative orders across clusters.
    SameOrder = 2,
}

impl fmt::Display for JtCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("JT condition {which} violated in cluster of cell {cluster}: users {users:?}")]
    ConditionViolation {
        which: JtCondition,
        cluster: CellId,
        users: Vec<UserId>,
    },

    #[error("infeasible guarantee at decode position {position} (user {user}): needs {required:.6e} mW, {available:.6e} mW left")]
    InfeasibleGuarantee {
        position: usize,
        user: UserId,
        required: f64,
        available: f64,
    },

    #[error("joint-transmission power split did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("refusing to write non-finite value in row {row}, column `{column}`")]
    NonFinite { row: usize, column: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Configuration problems map to exit code 1, everything else to 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse(_) | Error::Validation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
