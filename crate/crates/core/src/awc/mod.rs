//! Learned window control: features, the WC-DNN regressor, training,
//! and the stabilised runtime controller.

mod dataset;
mod mlp;
mod model;
mod stabilize;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::metrics::MetricsSnapshot;
use crate::policies::{GammaBounds, WindowDecision};
use crate::topology::Pair;

pub use dataset::{
    generate_dataset, label_scenario, load_dataset, objective_scores, save_dataset,
    split_by_scenario, sweep_scenario, window_for, CandidateResult, ObjectiveWeights,
    ScenarioSweep, SweepSample, CANDIDATES,
};
pub use mlp::{AdamW, AdamWConfig, MlpDims, ResidualMlp, Trace, N_FEATURES};
pub use model::{train, AwcModel, Normalizer, TrainConfig, TrainReport};
pub use stabilize::{
    clamp_prediction, quantize, stabilized_decide, ExecMode, SmootherState, StabilizerConfig,
};

/// Controller inputs, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub q_depth: f64,
    pub alpha_recent: f64,
    pub rtt_recent: f64,
    pub tpot_recent: f64,
    pub gamma_prev: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.q_depth,
            self.alpha_recent,
            self.rtt_recent,
            self.tpot_recent,
            self.gamma_prev,
        ]
    }

    pub fn from_array(a: [f64; N_FEATURES]) -> Self {
        FeatureVector {
            q_depth: a[0],
            alpha_recent: a[1],
            rtt_recent: a[2],
            tpot_recent: a[3],
            gamma_prev: a[4],
        }
    }
}

/// Queue utilisation and TPOT are read at the pair's target; acceptance,
/// RTT and the previous window are per pair.
pub fn extract_features(snapshot: &MetricsSnapshot<'_>, pair: Pair, gamma_init: u32) -> FeatureVector {
    FeatureVector {
        q_depth: snapshot.queue_utilization(pair.target),
        alpha_recent: snapshot.acceptance_rate(pair),
        rtt_recent: snapshot.rtt_ms(pair),
        tpot_recent: snapshot.tpot_ms(pair.target),
        gamma_prev: f64::from(snapshot.gamma_prev(pair).unwrap_or(gamma_init)),
    }
}

/// Runtime AWC policy: one smoother per pair over a shared model.
#[derive(Debug, Clone)]
pub struct AwcController {
    model: Arc<AwcModel>,
    gamma_init: u32,
    cfg: StabilizerConfig,
    states: HashMap<Pair, SmootherState>,
}

impl AwcController {
    pub fn new(model: Arc<AwcModel>, gamma_init: u32, bounds: GammaBounds) -> Self {
        AwcController {
            model,
            gamma_init,
            cfg: StabilizerConfig {
                bounds,
                ..StabilizerConfig::default()
            },
            states: HashMap::new(),
        }
    }

    pub fn gamma_init(&self) -> u32 {
        self.gamma_init
    }

    pub fn state(&self, pair: Pair) -> Option<&SmootherState> {
        self.states.get(&pair)
    }

    pub fn decide(&mut self, pair: Pair, snapshot: &MetricsSnapshot<'_>) -> WindowDecision {
        let f = extract_features(snapshot, pair, self.gamma_init);
        let raw = self.model.predict(&f);
        let state = self.states.entry(pair).or_default();
        stabilized_decide(raw, state, &self.cfg)
    }
}
