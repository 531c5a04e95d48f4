use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },

    #[error("integrand is not finite at x = {x}")]
    NonFiniteValue { x: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "saturating integral did not converge after {halvings} halvings \
         (last estimate {last}, previous {previous})"
    )]
    NonConvergence {
        halvings: u32,
        last: f64,
        previous: f64,
    },

    #[error("threshold {k} unreachable before x = {domain_hi}; maximum accumulation {max_attained}")]
    ThresholdUnreachable {
        k: f64,
        domain_hi: f64,
        max_attained: f64,
    },

    #[error("optimizer budget exceeded: search dimension {dimension} exceeds limit {limit}")]
    OptimizerBudget { dimension: usize, limit: usize },

    #[error("continuity precondition violated: mu1 = {mu1} is not positive (k not above threshold here)")]
    ContinuityPrecondition { mu1: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate perturbation: on-time moved by {delta_t_on}, increase delta")]
    DegeneratePerturbation { delta_t_on: f64 },

    #[error("invalid spectrum line {index}: {field} {reason}")]
    InvalidLine {
        index: usize,
        field: &'static str,
        reason: String,
    },
}

impl Error {
    /// Solver failures as opposed to bad inputs or violated preconditions.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::ThresholdUnreachable { .. }
                | Error::NonFiniteValue { .. }
                | Error::NonFiniteSample { .. }
                | Error::OptimizerBudget { .. }
                | Error::DegeneratePerturbation { .. }
        )
    }
}
