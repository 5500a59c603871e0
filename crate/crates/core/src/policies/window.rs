use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::awc::{AwcController, AwcModel};
use crate::metrics::MetricsSnapshot;
use crate::topology::Pair;

/// Execution mode and window size for one speculation iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowDecision {
    Distributed { gamma: u32 },
    Fused,
}

impl WindowDecision {
    pub fn gamma(self) -> Option<u32> {
        match self {
            WindowDecision::Distributed { gamma } => Some(gamma),
            WindowDecision::Fused => None,
        }
    }

    /// Compact report encoding: the window size, or 0 for fused.
    pub fn code(self) -> u32 {
        self.gamma().unwrap_or(0)
    }

    pub fn from_code(code: u32) -> Self {
        if code == 0 {
            WindowDecision::Fused
        } else {
            WindowDecision::Distributed { gamma: code }
        }
    }

    pub fn is_fused(self) -> bool {
        self == WindowDecision::Fused
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammaBounds {
    pub min: u32,
    pub max: u32,
}

impl Default for GammaBounds {
    fn default() -> Self {
        GammaBounds { min: 1, max: 12 }
    }
}

impl GammaBounds {
    pub fn clamp(self, g: u32) -> u32 {
        g.clamp(self.min, self.max)
    }
}

fn default_gamma() -> u32 {
    4
}

fn default_raise() -> f64 {
    0.75
}

fn default_lower() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowConfig {
    Static {
        #[serde(default = "default_gamma")]
        gamma: u32,
    },
    Dynamic {
        #[serde(default = "default_gamma")]
        gamma_init: u32,
        #[serde(default = "default_raise")]
        raise_above: f64,
        #[serde(default = "default_lower")]
        lower_below: f64,
    },
    Awc {
        model: PathBuf,
        #[serde(default = "default_gamma")]
        gamma_init: u32,
    },
    /// Target-only execution for every request.
    Fused,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig::Static { gamma: 4 }
    }
}

impl WindowConfig {
    pub fn label(&self) -> &'static str {
        match self {
            WindowConfig::Static { .. } => "static",
            WindowConfig::Dynamic { .. } => "dynamic",
            WindowConfig::Awc { .. } => "awc",
            WindowConfig::Fused => "fused",
        }
    }
}

pub fn window_static(gamma: u32) -> WindowDecision {
    WindowDecision::Distributed { gamma }
}

/// Threshold rule on the recent acceptance rate: step up above
/// `raise_above`, step down below `lower_below`, otherwise hold.
pub fn window_dynamic(
    acceptance: f64,
    gamma: &mut u32,
    bounds: GammaBounds,
    raise_above: f64,
    lower_below: f64,
) -> WindowDecision {
    if acceptance > raise_above {
        *gamma = (*gamma + 1).min(bounds.max);
    } else if acceptance < lower_below {
        *gamma = gamma.saturating_sub(1).max(bounds.min);
    }
    WindowDecision::Distributed { gamma: *gamma }
}

/// Per-simulation window policy with its per-pair state.
#[derive(Debug, Clone)]
pub enum WindowController {
    Static {
        gamma: u32,
    },
    Dynamic {
        gamma_init: u32,
        raise_above: f64,
        lower_below: f64,
        bounds: GammaBounds,
        state: HashMap<Pair, u32>,
    },
    Awc(AwcController),
    Fused,
}

impl WindowController {
    /// `awc_model` is required for [`WindowConfig::Awc`].
    pub fn new(
        config: &WindowConfig,
        bounds: GammaBounds,
        awc_model: Option<Arc<AwcModel>>,
    ) -> crate::Result<Self> {
        Ok(match *config {
            WindowConfig::Static { gamma } => WindowController::Static {
                gamma: bounds.clamp(gamma),
            },
            WindowConfig::Dynamic {
                gamma_init,
                raise_above,
                lower_below,
            } => WindowController::Dynamic {
                gamma_init: bounds.clamp(gamma_init),
                raise_above,
                lower_below,
                bounds,
                state: HashMap::new(),
            },
            WindowConfig::Awc { gamma_init, .. } => {
                let model = awc_model.ok_or_else(|| {
                    crate::Error::Config("AWC window policy needs a trained model".into())
                })?;
                WindowController::Awc(AwcController::new(model, bounds.clamp(gamma_init), bounds))
            }
            WindowConfig::Fused => WindowController::Fused,
        })
    }

    pub fn gamma_init(&self) -> u32 {
        match self {
            WindowController::Static { gamma } => *gamma,
            WindowController::Dynamic { gamma_init, .. } => *gamma_init,
            WindowController::Awc(c) => c.gamma_init(),
            WindowController::Fused => 1,
        }
    }

    pub fn decide(&mut self, pair: Pair, snapshot: &MetricsSnapshot<'_>) -> WindowDecision {
        match self {
            WindowController::Static { gamma } => window_static(*gamma),
            WindowController::Dynamic {
                gamma_init,
                raise_above,
                lower_below,
                bounds,
                state,
            } => {
                let g = state.entry(pair).or_insert(*gamma_init);
                window_dynamic(
                    snapshot.acceptance_rate(pair),
                    g,
                    *bounds,
                    *raise_above,
                    *lower_below,
                )
            }
            WindowController::Awc(c) => c.decide(pair, snapshot),
            WindowController::Fused => WindowDecision::Fused,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_is_constant() {
        assert!((0..1000).all(|_| window_static(4) == WindowDecision::Distributed { gamma: 4 }));
        assert_eq!(window_static(1), WindowDecision::Distributed { gamma: 1 });
    }

    #[test]
    fn dynamic_examples() {
        let b = GammaBounds::default();
        let mut g = 4;
        assert_eq!(
            window_dynamic(0.9, &mut g, b, 0.75, 0.25),
            WindowDecision::Distributed { gamma: 5 }
        );
        let mut g = 12;
        window_dynamic(1.0, &mut g, b, 0.75, 0.25);
        assert_eq!(g, 12);
        let mut g = 4;
        window_dynamic(0.5, &mut g, b, 0.75, 0.25);
        assert_eq!(g, 4);
        let mut g = 1;
        window_dynamic(0.0, &mut g, b, 0.75, 0.25);
        assert_eq!(g, 1);
    }

    #[test]
    fn dynamic_thresholds_are_strict() {
        let b = GammaBounds::default();
        let mut g = 4;
        window_dynamic(0.75, &mut g, b, 0.75, 0.25);
        window_dynamic(0.25, &mut g, b, 0.75, 0.25);
        assert_eq!(g, 4);
    }

    #[test]
    fn dynamic_saturates_in_expected_steps() {
        let b = GammaBounds::default();
        let mut g = 4;
        let mut changes = 0;
        for _ in 0..30 {
            let before = g;
            window_dynamic(1.0, &mut g, b, 0.75, 0.25);
            changes += u32::from(g != before);
        }
        assert_eq!((g, changes), (12, 8));
        let mut g = 4;
        let mut changes = 0;
        for _ in 0..30 {
            let before = g;
            window_dynamic(0.0, &mut g, b, 0.75, 0.25);
            changes += u32::from(g != before);
        }
        assert_eq!((g, changes), (1, 3));
    }

    #[test]
    fn decision_codes() {
        assert_eq!(WindowDecision::Fused.code(), 0);
        assert_eq!(WindowDecision::from_code(7).gamma(), Some(7));
        assert!(WindowDecision::from_code(0).is_fused());
    }
}
