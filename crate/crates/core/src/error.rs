use thiserror::Error;

use crate::measures::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid group table: {0}")]
    InvalidGroup(String),

    #[error("not a subgroup: {0}")]
    NotSubgroup(String),

    #[error("subgroup is not normal: {0}")]
    NotNormal(String),

    #[error("non-finite integrand value {value} at {point}")]
    NonFinite { value: f64, point: Point },

    #[error("negative density value {value} at {point}")]
    NegativeDensity { value: f64, point: Point },

    #[error("density does not normalize: total mass {mass}, residual {residual:e} exceeds {tolerance:e}")]
    Normalization {
        mass: f64,
        residual: f64,
        tolerance: f64,
    },

    #[error("divergent entropy integral: {0}")]
    Divergent(String),

    #[error("absolute continuity violated at {point}: reference density vanishes where the density is {value}")]
    AbsoluteContinuity { value: f64, point: Point },

    #[error("singular linear map (|det| = {0:e})")]
    Singular(f64),

    #[error("incompatible reference measures: {0}")]
    Incompatible(String),

    #[error("conditional undefined: fiber at {0} carries zero mass")]
    ZeroMassFiber(Point),

    #[error("rejection sampler efficiency {efficiency:e} below {floor:e} after {proposals} proposals")]
    Rejection {
        efficiency: f64,
        floor: f64,
        proposals: u64,
    },

    #[error("type enumeration budget exceeded ({classes} classes > {budget}); use the Monte Carlo estimator")]
    Budget { classes: u128, budget: u128 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
