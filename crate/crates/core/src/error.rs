use thiserror::Error;

/// Errors produced by the kernels in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, left is {left:?}, right is {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix data length {len} does not match shape {rows}x{cols}")]
    BadLength {
        rows: usize,
        cols: usize,
        len: usize,
    },

    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("exp overflow at ({row}, {col}): argument {value} exceeds {limit}")]
    ExpOverflow {
        row: usize,
        col: usize,
        value: f64,
        limit: f64,
    },

    #[error("power {exponent} undefined for entry {value} at ({row}, {col})")]
    Domain {
        row: usize,
        col: usize,
        value: f64,
        exponent: f64,
    },

    #[error("sparse entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("duplicate sparse entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },

    #[error("relative Frobenius error against a zero-norm reference")]
    ZeroReference,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degree cap {cap} reached before relative error {target:e} was certified (best {best:e} at degree {best_degree})")]
    DegreeCapReached {
        cap: usize,
        target: f64,
        best: f64,
        best_degree: usize,
    },

    #[error("monomial basis too large for d={d}, g={g}: r={r}, bound C(2(g+d),2g)={bound} exceeds cap {cap}")]
    BasisTooLarge {
        d: usize,
        g: usize,
        r: u128,
        bound: u128,
        cap: u128,
    },

    #[error("multinomial coefficient overflows i64 for exponents {0:?}")]
    MultinomialOverflow(Vec<u32>),

    #[error("polynomial range exceeded: max |<q,k>|/d = {max} > R = {bound}")]
    BoundViolation { max: f64, bound: f64 },

    #[error("polynomial normalization collapsed at row {row}: row sum {value}")]
    NormalizationCollapsed { row: usize, value: f64 },

    #[error("all-zero input: bucket floor undefined")]
    AllZero,
}

pub type Result<T> = std::result::Result<T, Error>;
