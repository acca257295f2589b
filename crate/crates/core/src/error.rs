use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("observation {index}: follow-up time {time} must be positive and finite")]
    InvalidTime { index: usize, time: f64 },

    #[error("observation {index}: covariate {coord} is not finite ({value})")]
    InvalidCovariate { index: usize, coord: usize, value: f64 },

    #[error("observation {index}: expected {expected} covariates, found {found}")]
    CovariateLength { index: usize, expected: usize, found: usize },

    #[error("dataset contains no uncensored observations")]
    NoEvents,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("exp(beta'z) overflows at beta'z = {linear_predictor}")]
    Overflow { linear_predictor: f64 },

    #[error("model has no covariates; {0} requires p >= 1")]
    NoCovariates(&'static str),

    #[error("invalid step curve: {0}")]
    InvalidCurve(String),

    #[error("csv header mismatch: {0}")]
    Header(String),

    #[error("csv row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("fit did not converge (status {0})")]
    NotConverged(String),

    #[error("observed information is singular")]
    SingularInformation,

    #[error("evaluation point {x} lies outside the supported range: {reason}")]
    OutOfRange { x: f64, reason: String },

    #[error("quadrature on [{a}, {b}] did not reach tolerance (error estimate {estimate:e})")]
    Quadrature { a: f64, b: f64, estimate: f64 },

    #[error("invalid truth model: {0}")]
    InvalidTruth(String),

    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),

    #[error("experiment invalid: {excluded} of {replications} replications excluded at n = {n} (cap {cap})")]
    ExclusionCap {
        n: usize,
        excluded: usize,
        replications: usize,
        cap: usize,
    },

    #[error("variance undefined: {0}")]
    Variance(&'static str),
}
