use thiserror::Error;

use crate::instances::ConditionReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("construction failed: a/b sequences violate conditions ({})", .0.failed_conditions().join(", "))]
    Conditions(Box<ConditionReport>),

    #[error("numeric fault at step {step}: {what}")]
    NumericFault { step: u64, what: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
