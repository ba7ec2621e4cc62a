//! Mixed neural posterior estimation (MNPE).

pub mod calibration;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod flow;
pub mod made;
pub mod metrics;
pub mod nn;
pub mod posterior;
pub mod real;
pub mod reference;
pub mod simulators;
pub mod spline;

pub use error::{Error, Result};
pub use real::Real;

/// Double-precision estimator used by the command-line tools.
pub type Estimator = estimator::MnpeEstimator<f64>;
