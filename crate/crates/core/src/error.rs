use thiserror::Error;

use crate::params::HypothesisViolation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("layer `{layer}` has non-positive length {length}")]
    NonPositiveLength { layer: &'static str, length: f64 },
    #[error("layer `{layer}` has {cells} cells, at least 2 required")]
    TooFewCells { layer: &'static str, cells: usize },
    #[error("transverse extent must be positive with at least one cell (got width {width}, {cells} cells)")]
    BadTransverse { width: f64, cells: usize },
    #[error("field has {got} values, mesh has {expected} cells")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("argument `{name}` must be positive, got {value}")]
    NonPositiveArgument { name: &'static str, value: f64 },
    #[error("regularization parameter tau = {0} outside (0, 1)")]
    TauOutOfRange(f64),
    #[error("concentration {value} is not positive in electrode cell {cell}")]
    NonPositiveConcentration { cell: usize, value: f64 },
    #[error("exponent {exponent:e} saturated at +/-{limit}")]
    ExponentSaturation { exponent: f64, limit: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("parameter validation failed: {}", format_violations(.0))]
    Hypotheses(Vec<HypothesisViolation>),
    #[error("h = {value} at cell {cell} violates 1/K <= h <= K with K = {k}")]
    HBoundViolated { cell: usize, value: f64, k: f64 },
    #[error("non-finite potential at cell {0}")]
    NonFinitePotential(usize),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid kappa table: {0}")]
    KappaTable(String),
}

fn format_violations(v: &[HypothesisViolation]) -> String {
    v.iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("potential solve did not converge in {iterations} iterations (residual {residual:e})")]
    PotentialNonConvergence { iterations: usize, residual: f64 },
    #[error(
        "concentration solve did not converge in {iterations} iterations (residual {residual:e})"
    )]
    ConcentrationNonConvergence { iterations: usize, residual: f64 },
    #[error("outer fixed point did not converge in {iterations} iterations; increment history {history:?}")]
    OuterNonConvergence {
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("linear solve failed: {0}")]
    Linear(String),
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("coefficient {value} at cell {cell} must be positive and finite")]
    NonPositiveCoefficient { cell: usize, value: f64 },
    #[error("invalid solver settings: {0}")]
    BadSettings(String),
    #[error("current data incompatible on {component}: net current {net:e}")]
    IncompatibleCurrent { component: &'static str, net: f64 },
    #[error("concentration {value:e} <= 0 at cell {cell}, t = {time}")]
    NonPositiveConcentration { cell: usize, time: f64, value: f64 },
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifespanError {
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("De Giorgi orbit diverged at step {step}")]
    Diverged { step: usize },
    #[error("T_max underflows double precision (ln T_max = {0})")]
    Underflow(f64),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}` in section [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Several(Vec<ConfigError>),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lifespan(#[from] LifespanError),
}
