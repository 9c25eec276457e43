//! Moving-particles multilevel splitting.
//!
//! Estimates extreme failure probabilities and quantiles of a limit-state
//! function by running populations of particles that are repeatedly resampled
//! above their own level, and builds first designs of experiments that reach
//! the failure domain with a trend-fixed kriging surrogate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod doe;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod limit_state;
pub mod mover;
pub mod probability;
pub mod quantile;
pub mod rng;
pub mod special;
pub mod stats;
pub mod wire;

pub use error::{Error, Result};
pub use kernel::{KernelConfig, KernelKind};
pub use limit_state::{Benchmark, LimitState};
pub use mover::{EventLog, Stop};
pub use probability::{ProbEstimate, Sampling};
pub use quantile::{QuantileEstimate, QuantileMode};
