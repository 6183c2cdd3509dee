//! Neural arithmetic units with hand-derived gradients, the arithmetic
//! extrapolation benchmark and the statistics used to score it.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gating;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod gradcheck;
pub mod initialization;
pub mod regularization;
pub mod sequence;
pub mod units;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream};
