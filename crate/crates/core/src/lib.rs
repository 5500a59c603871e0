//! Discrete-event simulator for distributed speculative decoding.
//!
//! Draft devices propose tokens, target devices verify them in batches,
//! and a network link with configurable RTT and jitter sits in between.
//! Numeric code that benefits from it (latency grids, the analytic
//! speed-up model, the window-control network) is generic over
//! [`Scalar`]; the aliases below fix it to `f64`.

pub mod awc;
pub mod engine;
mod error;
pub mod latency;
pub mod metrics;
pub mod policies;
mod scalar;
pub mod scenario;
pub mod sim;
pub mod topology;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LatencyGrid = latency::Grid<f64>;
pub type WcDnn = awc::ResidualMlp<f64>;
pub type SpecDecParams = latency::SpecDecParams<f64>;
