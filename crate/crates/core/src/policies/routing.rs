use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::metrics::MetricsSnapshot;
use crate::sim::RngStream;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingKind {
    #[default]
    Random,
    RoundRobin,
    Jsq,
}

/// What JSQ counts as queue depth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMeasure {
    /// Outstanding requests assigned to the target.
    #[default]
    Requests,
    /// Remaining output tokens of those requests.
    Tokens,
}

pub fn route_random(n_targets: usize, rng: &mut RngStream) -> usize {
    assert!(n_targets > 0, "routing needs at least one target");
    rng.random_range(0..n_targets)
}

/// Advances a cluster-wide counter and returns the next target in cycle.
pub fn route_round_robin(counter: &mut u64, n_targets: usize) -> usize {
    assert!(n_targets > 0, "routing needs at least one target");
    let t = (*counter % n_targets as u64) as usize;
    *counter += 1;
    t
}

/// Index of the smallest depth; ties go to the lowest index.
pub fn route_jsq<T: PartialOrd + Copy>(depths: &[T]) -> usize {
    assert!(!depths.is_empty(), "routing needs at least one target");
    let mut best = 0;
    for (i, d) in depths.iter().enumerate().skip(1) {
        if *d < depths[best] {
            best = i;
        }
    }
    best
}

/// Stateful router owning its random stream and round-robin counter.
#[derive(Debug, Clone)]
pub struct Router {
    kind: RoutingKind,
    measure: DepthMeasure,
    counter: u64,
    rng: RngStream,
}

impl Router {
    pub fn new(kind: RoutingKind, measure: DepthMeasure, rng: RngStream) -> Self {
        Router {
            kind,
            measure,
            counter: 0,
            rng,
        }
    }

    pub fn kind(&self) -> RoutingKind {
        self.kind
    }

    pub fn route(&mut self, snapshot: &MetricsSnapshot<'_>) -> usize {
        let n = snapshot.n_targets();
        if n == 1 {
            return 0;
        }
        match self.kind {
            RoutingKind::Random => route_random(n, &mut self.rng),
            RoutingKind::RoundRobin => route_round_robin(&mut self.counter, n),
            RoutingKind::Jsq => match self.measure {
                DepthMeasure::Requests => route_jsq(snapshot.queue_depths()),
                DepthMeasure::Tokens => route_jsq(snapshot.queue_tokens()),
            },
        }
    }
}
