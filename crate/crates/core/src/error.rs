use std::fmt;

use thiserror::Error;

/// Stage of a filter step, used to give failures context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Predict,
    EstimateAttack,
    ConstrainAttack,
    TimeUpdate,
    MeasurementUpdate,
    ConstrainState,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Predict => "predict",
            Stage::EstimateAttack => "estimate_attack",
            Stage::ConstrainAttack => "constrain_attack",
            Stage::TimeUpdate => "time_update",
            Stage::MeasurementUpdate => "measurement_update",
            Stage::ConstrainState => "constrain_state",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("constraint region is empty")]
    Infeasible,

    #[error("active-set search did not converge within {cap} iterations")]
    NoConvergence { cap: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("numerical inconsistency: {0}")]
    Numerical(String),

    #[error("step {step}, stage {stage}: {source}")]
    Step {
        step: usize,
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Strips step context, returning the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by the numbers rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Infeasible
                | Error::NoConvergence { .. }
                | Error::Singular(_)
                | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(ok: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(what()))
    }
}
