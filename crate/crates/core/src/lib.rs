//! Entropy of probability laws relative to arbitrary reference measures:
//! discrete, Lebesgue, polar and finite-group Haar references, disintegrations
//! with their chain rule, and typical-set experiments.

pub mod aep;
pub mod config;
pub mod error;
pub mod fibers;
pub mod measures;
pub mod numeric;
pub mod prob;
pub mod report;
pub mod selftest;

pub use error::{Error, Result};
pub use measures::{Point, ReferenceMeasure};
pub use prob::{Density, ProbMeasure};
