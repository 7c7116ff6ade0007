use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` is not numeric (row {row}: `{value}`)")]
    NonNumericColumn {
        column: String,
        row: usize,
        value: String,
    },
    #[error("table has no rows")]
    EmptyTable,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("K = {k} exceeds population size {n}")]
    KExceedsPopulation { k: usize, n: usize },
    #[error("feature index {index} out of range for {p} covariates")]
    BadFeatureIndex { index: usize, p: usize },
    #[error("invalid feature subset: {0}")]
    BadFeatureSubset(String),

    #[error("sample size {n} is smaller than the number of strata {k}")]
    SampleTooSmall { n: usize, k: usize },
    #[error("sample size {n} exceeds population size {population}")]
    SampleExceedsPopulation { n: usize, population: usize },
    #[error("infeasible allocation bounds: {0}")]
    InfeasibleBounds(String),
    #[error("enumeration would visit {points} allocations (cap {cap})")]
    InstanceTooLarge { points: u128, cap: u128 },

    #[error("stratum {stratum} allocated {allocated} units but holds only {size}")]
    OverAllocated {
        stratum: usize,
        allocated: usize,
        size: usize,
    },
    #[error("stratum {0} has no allocated units")]
    EmptyAllocation(usize),
    #[error("treatment and control variances sum to zero")]
    ZeroVariance,

    #[error("theta = {theta} exceeds the number of covariates {p}")]
    ThetaExceedsP { theta: usize, p: usize },

    #[error("all covariates are constant")]
    AllConstantCovariates,
    #[error("covariate {0} has zero variance")]
    ZeroVarianceCovariate(usize),

    #[error("p = {0} is too small for the coefficient pattern (need at least 17)")]
    PTooSmall(usize),
    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("need at least {min} replications, got {actual}")]
    TooFewReplications { min: usize, actual: usize },
    #[error("baseline variance is zero")]
    ZeroBaselineVariance,

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
