//! Runtime sliding-window statistics, per-request records and reports.

mod report;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimTime;
use crate::topology::{Pair, Topology};

pub use report::{
    emit_report, percentile_nearest_rank, read_report, write_csv, write_csv_file, write_report, Ms,
    Report, RunStats, Summary, SystemMetrics,
};

/// Acceptance rate assumed for a pair with no verification history.
pub const ACCEPTANCE_PRIOR: f64 = 0.5;

/// Rounds a millisecond value to whole microseconds.
pub fn round_ms(ms: f64) -> f64 {
    (ms * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone)]
struct Window<T> {
    cap: usize,
    items: VecDeque<T>,
}

impl<T> Window<T> {
    fn new(cap: usize) -> Self {
        Window {
            cap,
            items: VecDeque::with_capacity(cap),
        }
    }

    fn push(&mut self, v: T) {
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back(v);
    }
}

/// Live statistics maintained during a simulation.
#[derive(Debug, Clone)]
pub struct Analyzer {
    queue_capacity: usize,
    acceptance_window: usize,
    tpot_window: usize,
    depths: Vec<u32>,
    tokens: Vec<u64>,
    acceptance: HashMap<Pair, Window<(u32, u32)>>,
    rtt: HashMap<Pair, Window<f64>>,
    tpot: Vec<Window<f64>>,
    gamma_prev: HashMap<Pair, u32>,
    topology: Topology,
}

impl Analyzer {
    pub fn new(topology: &Topology) -> Self {
        let pc = &topology.policy_config;
        let n = topology.n_targets();
        Analyzer {
            queue_capacity: pc.queue_capacity,
            acceptance_window: pc.acceptance_window,
            tpot_window: pc.tpot_window,
            depths: vec![0; n],
            tokens: vec![0; n],
            acceptance: HashMap::new(),
            rtt: HashMap::new(),
            tpot: (0..n).map(|_| Window::new(pc.tpot_window)).collect(),
            gamma_prev: HashMap::new(),
            topology: topology.clone(),
        }
    }

    /// A request was assigned to `target` with `tokens` of output to go.
    pub fn on_assign(&mut self, target: usize, tokens: u32) {
        self.depths[target] += 1;
        self.tokens[target] += u64::from(tokens);
    }

    pub fn on_tokens_committed(&mut self, target: usize, tokens: u32) {
        self.tokens[target] = self.tokens[target].saturating_sub(u64::from(tokens));
    }

    pub fn on_complete(&mut self, target: usize, tpot_ms: Option<f64>) {
        self.depths[target] = self.depths[target].saturating_sub(1);
        if let Some(t) = tpot_ms {
            self.tpot[target].push(t);
        }
    }

    pub fn on_verify(&mut self, pair: Pair, accepted: u32, proposed: u32) {
        let w = self.acceptance_window;
        self.acceptance
            .entry(pair)
            .or_insert_with(|| Window::new(w))
            .push((accepted, proposed));
    }

    /// Network time of one draft->target->draft exchange.
    pub fn on_round_trip(&mut self, pair: Pair, rtt_ms: f64) {
        let w = self.acceptance_window;
        self.rtt
            .entry(pair)
            .or_insert_with(|| Window::new(w))
            .push(rtt_ms);
    }

    pub fn on_decision(&mut self, pair: Pair, gamma: u32) {
        self.gamma_prev.insert(pair, gamma);
    }

    pub fn snapshot(&self, now: SimTime) -> MetricsSnapshot<'_> {
        MetricsSnapshot {
            analyzer: self,
            now,
        }
    }
}

/// Read-only view of [`Analyzer`] at one instant.
#[derive(Debug, Clone, Copy)]
pub struct MetricsSnapshot<'a> {
    analyzer: &'a Analyzer,
    now: SimTime,
}

impl<'a> MetricsSnapshot<'a> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn n_targets(&self) -> usize {
        self.analyzer.depths.len()
    }

    /// Outstanding requests per target.
    pub fn queue_depths(&self) -> &'a [u32] {
        &self.analyzer.depths
    }

    /// Remaining output tokens of outstanding requests per target.
    pub fn queue_tokens(&self) -> &'a [u64] {
        &self.analyzer.tokens
    }

    /// Depth over configured capacity, capped at 1.
    pub fn queue_utilization(&self, target: u32) -> f64 {
        let d = f64::from(self.analyzer.depths[target as usize]);
        (d / self.analyzer.queue_capacity as f64).min(1.0)
    }

    /// Accepted over proposed drafts in the pair's recent window.
    pub fn acceptance_rate(&self, pair: Pair) -> f64 {
        match self.analyzer.acceptance.get(&pair) {
            Some(w) if !w.items.is_empty() => {
                let (a, p) = w
                    .items
                    .iter()
                    .fold((0u64, 0u64), |(a, p), (x, y)| (a + u64::from(*x), p + u64::from(*y)));
                if p == 0 {
                    ACCEPTANCE_PRIOR
                } else {
                    a as f64 / p as f64
                }
            }
            _ => ACCEPTANCE_PRIOR,
        }
    }

    /// Mean observed round trip, or the configured link RTT before any.
    pub fn rtt_ms(&self, pair: Pair) -> f64 {
        match self.analyzer.rtt.get(&pair) {
            Some(w) if !w.items.is_empty() => w.items.iter().sum::<f64>() / w.items.len() as f64,
            _ => self.analyzer.topology.link(pair).rtt_ms,
        }
    }

    /// Mean TPOT of the target's recent completions, 0 before any.
    pub fn tpot_ms(&self, target: u32) -> f64 {
        let w = &self.analyzer.tpot[target as usize];
        if w.items.is_empty() {
            0.0
        } else {
            w.items.iter().sum::<f64>() / w.items.len() as f64
        }
    }

    pub fn gamma_prev(&self, pair: Pair) -> Option<u32> {
        self.analyzer.gamma_prev.get(&pair).copied()
    }

    pub fn tpot_window(&self) -> usize {
        self.analyzer.tpot_window
    }
}

/// Raw timeline of one request as recorded by the engine.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RequestOutcome {
    pub request_id: u64,
    pub output_length: u32,
    pub target_id: u32,
    pub arrival: SimTime,
    pub first_token: Option<SimTime>,
    pub completion: Option<SimTime>,
    pub proposed: u64,
    pub accepted: u64,
    /// Window code per iteration, 0 for fused steps.
    pub gamma_sequence: Vec<u32>,
    /// Tokens committed per iteration after truncation to the budget.
    pub committed_sequence: Vec<u32>,
}

/// Per-request report record. Millisecond values are rounded to whole
/// microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub request_id: u64,
    pub output_length: u32,
    pub ttft_ms: Ms,
    pub tpot_ms: Option<Ms>,
    pub e2e_latency_ms: Ms,
    pub acceptance_ratio: Option<f64>,
    pub routing_decision: u32,
    pub gamma_sequence: Vec<u32>,
    pub committed_sequence: Vec<u32>,
}

impl MetricsRecord {
    pub fn committed_total(&self) -> u64 {
        self.committed_sequence.iter().map(|&c| u64::from(c)).sum()
    }
}

/// TTFT = first_token - arrival; TPOT = (completion - first_token) /
/// (output_length - 1), undefined below two output tokens.
pub fn finalize_request(r: &RequestOutcome) -> Result<MetricsRecord> {
    let (Some(first), Some(done)) = (r.first_token, r.completion) else {
        return Err(Error::IncompleteRequest(r.request_id));
    };
    if first < r.arrival || done < first {
        return Err(Error::IncompleteRequest(r.request_id));
    }
    let ttft = first.saturating_sub(r.arrival).as_ms();
    let e2e = done.saturating_sub(r.arrival).as_ms();
    let tpot = (r.output_length >= 2)
        .then(|| round_ms(done.saturating_sub(first).as_ms() / f64::from(r.output_length - 1)));
    let acceptance = (r.proposed > 0).then(|| r.accepted as f64 / r.proposed as f64);
    Ok(MetricsRecord {
        request_id: r.request_id,
        output_length: r.output_length,
        ttft_ms: Ms(round_ms(ttft)),
        tpot_ms: tpot.map(Ms),
        e2e_latency_ms: Ms(round_ms(e2e)),
        acceptance_ratio: acceptance,
        routing_decision: r.target_id,
        gamma_sequence: r.gamma_sequence.clone(),
        committed_sequence: r.committed_sequence.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{auto_topology, parse_config_str};

    fn analyzer() -> Analyzer {
        let (c, _) = parse_config_str(
            "targets: 2\ndrafts: 2\nnetwork: {rtt_ms: 12}\npolicies: {queue_capacity: 32}\n",
            true,
        )
        .unwrap();
        Analyzer::new(&auto_topology(&c).unwrap())
    }

    #[test]
    fn ttft_tpot_definitions() {
        let r = RequestOutcome {
            request_id: 1,
            output_length: 91,
            arrival: SimTime::ZERO,
            first_token: Some(SimTime::from_ms(100.0)),
            completion: Some(SimTime::from_ms(1000.0)),
            ..Default::default()
        };
        let m = finalize_request(&r).unwrap();
        assert_eq!(m.ttft_ms.0, 100.0);
        assert_eq!(m.tpot_ms.unwrap().0, 10.0);
        assert_eq!(m.e2e_latency_ms.0, 1000.0);
        assert_eq!(m.acceptance_ratio, None);
    }

    #[test]
    fn single_token_has_no_tpot() {
        let r = RequestOutcome {
            output_length: 1,
            first_token: Some(SimTime::from_ms(3.0)),
            completion: Some(SimTime::from_ms(3.0)),
            ..Default::default()
        };
        assert_eq!(finalize_request(&r).unwrap().tpot_ms, None);
    }

    #[test]
    fn missing_timestamps_are_an_error() {
        let r = RequestOutcome {
            request_id: 9,
            ..Default::default()
        };
        assert!(matches!(finalize_request(&r), Err(Error::IncompleteRequest(9))));
    }

    #[test]
    fn all_accepted_ratio_is_one() {
        let r = RequestOutcome {
            output_length: 10,
            first_token: Some(SimTime::from_ms(1.0)),
            completion: Some(SimTime::from_ms(2.0)),
            proposed: 8,
            accepted: 8,
            ..Default::default()
        };
        assert_eq!(finalize_request(&r).unwrap().acceptance_ratio, Some(1.0));
    }

    #[test]
    fn cold_start_snapshot() {
        let a = analyzer();
        let s = a.snapshot(SimTime::ZERO);
        let p = Pair::new(0, 1);
        assert_eq!(s.queue_utilization(1), 0.0);
        assert_eq!(s.acceptance_rate(p), 0.5);
        assert_eq!(s.rtt_ms(p), 12.0);
        assert_eq!(s.tpot_ms(1), 0.0);
        assert_eq!(s.gamma_prev(p), None);
    }

    #[test]
    fn one_verify_sets_rate() {
        let mut a = analyzer();
        let p = Pair::new(1, 0);
        a.on_verify(p, 2, 4);
        assert_eq!(a.snapshot(SimTime::ZERO).acceptance_rate(p), 0.5);
        a.on_verify(p, 4, 4);
        assert_eq!(a.snapshot(SimTime::ZERO).acceptance_rate(p), 0.75);
    }

    #[test]
    fn twenty_full_accepts_give_one() {
        let mut a = analyzer();
        let p = Pair::new(0, 0);
        for _ in 0..5 {
            a.on_verify(p, 0, 4);
        }
        for _ in 0..20 {
            a.on_verify(p, 4, 4);
        }
        assert_eq!(a.snapshot(SimTime::ZERO).acceptance_rate(p), 1.0);
    }

    #[test]
    fn queue_utilization_ratio() {
        let mut a = analyzer();
        for _ in 0..8 {
            a.on_assign(0, 10);
        }
        let s = a.snapshot(SimTime::ZERO);
        assert_eq!(s.queue_utilization(0), 0.25);
        assert_eq!(s.queue_tokens()[0], 80);
    }

    #[test]
    fn snapshot_is_pure() {
        let mut a = analyzer();
        a.on_verify(Pair::new(0, 0), 3, 4);
        a.on_round_trip(Pair::new(0, 0), 9.5);
        let t = SimTime::from_ms(5.0);
        let (s1, s2) = (a.snapshot(t), a.snapshot(t));
        let p = Pair::new(0, 0);
        assert_eq!(s1.acceptance_rate(p), s2.acceptance_rate(p));
        assert_eq!(s1.rtt_ms(p), s2.rtt_ms(p));
        assert_eq!(s1.now(), s2.now());
    }

    #[test]
    fn tpot_window_keeps_last_entries() {
        let mut a = analyzer();
        for i in 0..60 {
            a.on_assign(1, 1);
            a.on_complete(1, Some(f64::from(i)));
        }
        // last 50 of 0..60 are 10..=59
        assert_eq!(a.snapshot(SimTime::ZERO).tpot_ms(1), 34.5);
    }
}
