use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` expects {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("division by a value with zero standard part")]
    DivisionByZero,
    #[error("point has {found} coordinates, expected {expected}")]
    PointDimension { expected: usize, found: usize },
    #[error("jet nesting depth {requested} exceeds capacity {capacity}")]
    CapacityExceeded { requested: usize, capacity: usize },
    #[error("singular linear system (pivot {pivot:e})")]
    Singular { pivot: f64 },
    #[error("codimension q = {q} is not supported: the construction requires q different from 1 (q >= 2)")]
    CodimensionOne { q: usize },
    #[error("invalid dimensions: {0}")]
    Dimension(String),
    #[error("point {0:?} lies outside the chart domain")]
    OutsideDomain(Vec<f64>),
    #[error("one-form is not foliated (residual {residual:e})")]
    NonFoliatedForm { residual: f64 },
    #[error("connection is not adapted: {0}")]
    NotAdapted(String),
    #[error("symbol is not adapted: residual x-dependence {residual:e}")]
    SymbolNotAdapted { residual: f64 },
    #[error("function is not foliated: residual x-dependence {residual:e}")]
    FunctionNotFoliated { residual: f64 },
    #[error("diffeomorphism is not adapted: {0}")]
    NotAdaptedDiffeo(String),
    #[error("bracket leaves the adapted subalgebra")]
    LeavesSubalgebra,
    #[error("kind mismatch: {0}")]
    KindMismatch(String),
    #[error("quantizer is not linear (residual {residual:e})")]
    NonLinear { residual: f64 },
    #[error("divergence order {l} exceeds symbol degree {k}")]
    DivergenceOrder { l: usize, k: usize },
    #[error("tensor shape mismatch: {0}")]
    Shape(String),
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
