use thiserror::Error;

/// Errors raised while reading or editing a network case.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing required section `{0}`")]
    MissingSection(&'static str),
    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("{context} references unknown bus {id}")]
    UnknownBus { context: String, id: usize },
    #[error("branch {from}-{to} has zero reactance")]
    ZeroReactance { from: usize, to: usize },
    #[error("branch {from}-{to} has non-positive tap ratio {tap}")]
    BadTap { from: usize, to: usize, tap: f64 },
    #[error("case has no slack bus")]
    NoSlack,
    #[error("case has more than one slack bus ({0} and {1})")]
    MultipleSlack(usize, usize),
    #[error("bus {0}: {1}")]
    InvalidBus(usize, String),
    #[error("{0}")]
    Unsupported(String),
    #[error("no in-service branch joins buses {from} and {to}")]
    NoSuchBranch { from: usize, to: usize },
    #[error("tripping branch {from}-{to} would island part of the network")]
    Islanding { from: usize, to: usize },
    #[error("network is not connected")]
    Disconnected,
    #[error("invalid load scale: {0}")]
    InvalidScale(String),
}

/// Failures of the numerical core (power flow, sensitivities, oracle, integrator).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("negative multiplier {value} in {which}")]
    NegativeMultiplier { which: &'static str, value: f64 },
    #[error("power flow did not converge (max mismatch {max_mismatch:.3e} after {iterations} iterations)")]
    PowerFlowDiverged { iterations: usize, max_mismatch: f64 },
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("invalid input: {0}")]
    Invalid(String),
}
