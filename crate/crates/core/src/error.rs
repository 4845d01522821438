use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time index out of range: {what} = {index}, valid range is {lo}..={hi}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        lo: usize,
        hi: usize,
    },

    #[error("cocycle({m}, {n}) with m < n is only defined on the unstable bundle; use cocycle_on_unstable")]
    BackwardEvaluation { m: usize, n: usize },

    #[error("unstable restriction not invertible between times {m} and {n} (rcond {rcond:.3e})")]
    UnstableRestrictionSingular { m: usize, n: usize, rcond: f64 },

    #[error("invalid operator sequence: {0}")]
    InvalidSequence(String),

    #[error("unknown generator kind `{0}`")]
    UnknownGenerator(String),

    #[error("inconsistent generator parameters: {0}")]
    InvalidParams(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("sequence is tagged {got} but {expected} was required")]
    DomainTag {
        expected: &'static str,
        got: &'static str,
    },

    #[error("first entry is not in {space}: residual {residual:.3e}")]
    NotInSpace { space: &'static str, residual: f64 },

    #[error("Z-dimension incompatible: {0}")]
    ZDimensionIncompatible(String),

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("orbit vanishes at index {index}")]
    OrbitVanishes { index: usize },

    #[error("spectral gap too small at n = {n}: direction slope {slope:.4} within margin {margin}")]
    NoSpectralGap { n: usize, slope: f64, margin: f64 },

    #[error("unstable image degenerate at n = {n} (rcond {rcond:.3e})")]
    UnstableImageDegenerate { n: usize, rcond: f64 },

    #[error("splitting not transversal at n = {n}: smallest singular value {sigma_min:.3e}")]
    Transversality { n: usize, sigma_min: f64 },

    #[error("no polynomial decay: fitted rate {rate:.4} ({which})")]
    NoPolynomialDecay { rate: f64, which: &'static str },

    #[error("perturbation exceeds budget at m = {index}: {norm:.6e} > {budget:.6e}")]
    BudgetExceeded {
        index: usize,
        norm: f64,
        budget: f64,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("oracle limit exceeded: {0}")]
    OracleLimit(String),

    #[error("residual check failed: {what} = {value:.3e} > {tol:.1e}")]
    Residual {
        what: &'static str,
        value: f64,
        tol: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn range(what: &'static str, index: usize, lo: usize, hi: usize) -> Self {
        Error::IndexOutOfRange { what, index, lo, hi }
    }
}
