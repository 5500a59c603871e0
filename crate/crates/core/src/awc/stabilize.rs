use serde::{Deserialize, Serialize};

use crate::policies::{GammaBounds, WindowDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Distributed,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizerConfig {
    pub bounds: GammaBounds,
    /// Weight of the newest value in the moving average.
    pub ema_alpha: f64,
    /// Smoothed values at or below this count as "near 1".
    pub near_one: f64,
    /// Consecutive near-1 values required before switching to fused.
    pub hysteresis_k: u32,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        StabilizerConfig {
            bounds: GammaBounds::default(),
            ema_alpha: 0.4,
            near_one: 1.5,
            hysteresis_k: 2,
        }
    }
}

/// Per-pair smoothing state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SmootherState {
    pub ema: Option<f64>,
    pub low_streak: u32,
    pub mode: ExecMode,
}

pub fn clamp_prediction(raw: f64, bounds: GammaBounds) -> f64 {
    let (lo, hi) = (f64::from(bounds.min), f64::from(bounds.max));
    if raw.is_nan() {
        return lo;
    }
    raw.clamp(lo, hi)
}

/// Round half up, then into bounds.
pub fn quantize(x: f64, bounds: GammaBounds) -> u32 {
    let q = (x + 0.5).floor();
    q.clamp(f64::from(bounds.min), f64::from(bounds.max)) as u32
}

/// Clamp, smooth, apply hysteresis on the fused switch, quantize.
pub fn stabilized_decide(
    raw: f64,
    state: &mut SmootherState,
    cfg: &StabilizerConfig,
) -> WindowDecision {
    let clamped = clamp_prediction(raw, cfg.bounds);
    let ema = match state.ema {
        None => clamped,
        Some(prev) => cfg.ema_alpha * clamped + (1.0 - cfg.ema_alpha) * prev,
    };
    state.ema = Some(ema);
    let near_one = ema <= cfg.near_one;
    match state.mode {
        ExecMode::Distributed => {
            state.low_streak = if near_one { state.low_streak + 1 } else { 0 };
            if state.low_streak >= cfg.hysteresis_k {
                state.mode = ExecMode::Fused;
            }
        }
        ExecMode::Fused => {
            if !near_one {
                state.mode = ExecMode::Distributed;
                state.low_streak = 0;
            }
        }
    }
    let gamma = quantize(ema, cfg.bounds).max(1);
    if state.mode == ExecMode::Fused && gamma <= 1 {
        WindowDecision::Fused
    } else {
        WindowDecision::Distributed { gamma }
    }
}
