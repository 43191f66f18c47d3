use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A value fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Model or family parameters violate a structural constraint
    /// (characteristic-number inequalities, multiplicities, band limits).
    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("unknown saddle id `{0}`")]
    UnknownSaddle(String),

    /// An iterate of a correspondence map left (0, 1].
    #[error("iterate {iteration} left the unit interval (u = {u})")]
    DomainEscape { iteration: usize, u: f64 },

    #[error("index {index} is below the asymptotic regime (first admissible index is {first})")]
    BelowRegime { index: usize, first: usize },

    /// The residual sign scan found no sign change inside the bracket.
    #[error("no root of the connection equation at index {index}")]
    NoRoot { index: usize },

    /// The residual is not monotone across the bracket.
    #[error("{changes} sign changes in the residual scan at index {index}")]
    MultipleRoots { index: usize, changes: usize },

    #[error("bisection at index {index} stalled with residual {residual:e}")]
    NotConverged { index: usize, residual: f64 },

    #[error("sequence is not strictly decreasing at index {index}")]
    NotMonotone { index: usize },

    /// A counting query reached beyond the last computed element.
    #[error("sequence ends at u = {last_u:e}, below the threshold u = {threshold_u:e}")]
    SequenceTooShort { last_u: f64, threshold_u: f64 },

    #[error("counting function of the reference set is zero")]
    ZeroCount,

    /// The saddle field left its admissible band along a trajectory.
    #[error("field g = {g} left the band ({low}, {high}) at x = {x}, y = {y}")]
    FieldBand {
        x: f64,
        y: f64,
        g: f64,
        low: f64,
        high: f64,
    },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precision mode `{0}` is not available in this build")]
    Unsupported(String),
}

impl Error {
    /// Errors caused by the inputs rather than by the numerics.
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Constraint(_)
                | Error::UnknownSaddle(_)
                | Error::Config(_)
                | Error::Unsupported(_)
                | Error::BelowRegime { .. }
        )
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn constraint(msg: impl Into<String>) -> Self {
        Error::Constraint(msg.into())
    }
}
