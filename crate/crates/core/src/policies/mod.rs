//! Routing, batching and window-size policies. Each reads a
//! [`MetricsSnapshot`](crate::metrics::MetricsSnapshot) and its own state.

mod batching;
mod routing;
mod window;

use serde::{Deserialize, Serialize};

pub use batching::{batch_fifo, batch_lab, BatchingConfig, BatchingKind};
pub use routing::{route_jsq, route_random, route_round_robin, DepthMeasure, Router, RoutingKind};
pub use window::{
    window_dynamic, window_static, GammaBounds, WindowConfig, WindowController, WindowDecision,
};

/// The `policies` section of a deployment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub routing: RoutingKind,
    pub jsq_depth: DepthMeasure,
    pub batching: BatchingConfig,
    pub window: WindowConfig,
    pub gamma_min: u32,
    pub gamma_max: u32,
    /// Capacity against which queue-depth utilisation is measured.
    pub queue_capacity: usize,
    /// Verification iterations in the per-pair sliding window.
    pub acceptance_window: usize,
    /// Completions in the per-target TPOT window.
    pub tpot_window: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            routing: RoutingKind::Random,
            jsq_depth: DepthMeasure::Requests,
            batching: BatchingConfig::default(),
            window: WindowConfig::default(),
            gamma_min: 1,
            gamma_max: 12,
            queue_capacity: 64,
            acceptance_window: 20,
            tpot_window: 50,
        }
    }
}

impl PolicyConfig {
    pub fn bounds(&self) -> GammaBounds {
        GammaBounds {
            min: self.gamma_min,
            max: self.gamma_max,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: String| Err(crate::Error::Config(m));
        if self.gamma_min < 1 || self.gamma_min > self.gamma_max {
            return bad(format!(
                "window bounds [{}, {}] are invalid",
                self.gamma_min, self.gamma_max
            ));
        }
        if self.batching.max_batch_size == 0 {
            return bad("max_batch_size must be at least 1".into());
        }
        if !(self.batching.window_ms.is_finite() && self.batching.window_ms >= 0.0) {
            return bad("batching window must be non-negative".into());
        }
        if !(self.batching.similarity_fraction >= 0.0) {
            return bad("similarity_fraction must be non-negative".into());
        }
        if self.queue_capacity == 0 || self.acceptance_window == 0 || self.tpot_window == 0 {
            return bad("queue_capacity and metric windows must be positive".into());
        }
        if let WindowConfig::Static { gamma } = self.window {
            if gamma < 1 || gamma > self.gamma_max {
                return bad(format!("static gamma {gamma} outside [1, {}]", self.gamma_max));
            }
        }
        Ok(())
    }
}
