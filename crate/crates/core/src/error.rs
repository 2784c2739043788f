use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped loosely by the layer that raises them; [`Error::exit_code`]
/// maps each one onto the CLI's exit-code convention.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // design validation and linear algebra
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("bad shape: n = {n}, d = {d} (need d >= n >= 1)")]
    BadShape { n: usize, d: usize },
    #[error("design has numerical rank {rank} < n = {n}")]
    RankDeficient { rank: usize, n: usize },
    #[error("Gram matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // interpolation solvers
    #[error("solver did not converge within {iterations} iterations")]
    MaxIterations { iterations: usize },
    #[error("l1 minimizer is not unique (objective {objective}, certificate margin {margin})")]
    NotUnique { objective: f64, margin: f64 },
    #[error("support columns are not linearly independent")]
    SupportRankDeficient,

    // criterion evaluation
    #[error("dimension bound violated: 2d - p(d - n) = {value} <= 0 (p = {p}, d = {d}, n = {n})")]
    DimensionBound { p: f64, d: usize, n: usize, value: f64 },
    #[error("interpolator has zero norm")]
    ZeroNorm,
    #[error("coordinate {index} of the interpolator is numerically zero")]
    ZeroCoordinate { index: usize },
    #[error("support size {support} differs from n = {n}")]
    SupportNotFull { support: usize, n: usize },
    #[error("volume is infinite: |psi_{k}| = {psi} >= 1")]
    InfiniteVolume { k: usize, psi: f64 },
    #[error("kernel dimension {dim} exceeds limit {limit}")]
    DimensionTooHigh { dim: usize, limit: usize },
    #[error("sublevel body is unbounded")]
    UnboundedBody,
    #[error("maximum |x_j| is attained more than once")]
    TiedMaximum,
    #[error("coordinates {j} and {k} have (numerically) equal squares")]
    DegenerateCoordinates { j: usize, k: usize },
    #[error("kernel of X is trivial")]
    EmptyKernel,

    // oracles
    #[error("error estimate {error} above tolerance {tolerance} (estimate {log_value})")]
    BudgetExhausted { log_value: f64, error: f64, tolerance: f64 },
    #[error("free-energy minimum at grid boundary (index {index})")]
    MinimumAtBoundary { index: usize },
    #[error("numerical tau minimizer {numeric} disagrees with closed form {closed}")]
    TauMismatch { numeric: f64, closed: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),

    // features
    #[error("only {available} polynomial columns up to degree {degree}, need {target}")]
    DegreeExhausted { available: usize, degree: usize, target: usize },

    // data and experiments
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("parse error at row {row}, column '{column}': token '{token}'")]
    ParseError { row: usize, column: String, token: String },
    #[error("target column '{0}' missing")]
    TargetMissing(String),
    #[error("bad size: {0}")]
    BadSize(String),
    #[error("need at least {needed} points, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("all ranks tied")]
    ZeroVariance,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code: 2 usage, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            InvalidArgument(_) | ConfigInvalid(_) => 2,
            NonFinite
            | BadShape { .. }
            | RankDeficient { .. }
            | DimensionMismatch { .. }
            | FileNotFound(_)
            | ParseError { .. }
            | TargetMissing(_)
            | BadSize(_)
            | TooFew { .. }
            | ZeroVariance
            | DegreeExhausted { .. }
            | Io(_) => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
