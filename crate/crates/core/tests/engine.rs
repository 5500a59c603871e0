use std::collections::HashMap;

use proptest::prelude::*;
use specsim::engine::{simulate, LogEvent, ReqState, SimInput, SimOptions, SimOutput};
use specsim::latency::{synth_profile, LatencyProfile, SynthEntry, SynthSpec};
use specsim::policies::{BatchingKind, RoutingKind, WindowConfig};
use specsim::topology::{auto_topology, parse_config_str, Role, Topology};
use specsim::workload::{ArrivalMode, TraceRecord};

fn flat(model: &str, decode_ms: f64, prefill_ms: f64) -> SynthEntry {
    SynthEntry {
        model: model.into(),
        hardware: "default".into(),
        decode_ms,
        batch_slope_ms: 0.0,
        context_coeff_ms: 0.0,
        context_exponent: 0.5,
        prefill_base_ms: prefill_ms,
        prefill_ms_per_token: 0.0,
        calibration_factor: 1.0,
    }
}

fn flat_profile() -> LatencyProfile {
    synth_profile(&SynthSpec::new(vec![
        flat("target", 20.0, 3.0),
        flat("draft", 1.0, 0.5),
    ]))
    .unwrap()
}

fn topo(yaml: &str) -> Topology {
    let (c, _) = parse_config_str(yaml, true).unwrap();
    auto_topology(&c).unwrap()
}

fn rec(prompt: u32, output: u32, bits: Vec<u8>, at: f64, drafter: u32) -> TraceRecord {
    TraceRecord {
        prompt_length: prompt,
        output_length: output,
        acceptance_seq: bits,
        arrival_time_ms: at,
        drafter_id: drafter,
    }
}

fn run(t: &Topology, p: &LatencyProfile, recs: &[TraceRecord], seed: u64, log: bool) -> SimOutput {
    simulate(SimInput {
        topology: t,
        profile: p,
        records: recs,
        arrival: ArrivalMode::TraceDriven,
        seed,
        awc_model: None,
        options: SimOptions {
            event_log: log,
            feature_samples: 0,
        },
    })
    .unwrap()
}

#[test]
fn proposal_reaches_target_after_draft_and_half_rtt() {
    let t = topo("targets: 1\ndrafts: 1\nnetwork: {rtt_ms: 10}\n");
    let p = flat_profile();
    let out = run(&t, &p, &[rec(10, 20, vec![1], 0.0, 0)], 1, true);
    let first_verify = out
        .events
        .iter()
        .find(|e| e.state == Some(ReqState::Verifying))
        .unwrap();
    // draft prefill 0.5 ms, then 4 draft steps at 1 ms, then 5 ms one way
    assert_eq!(first_verify.t_us, 500 + 4_000 + 5_000);
}

#[test]
fn single_target_always_routed_there() {
    for routing in ["random", "round_robin", "jsq"] {
        let t = topo(&format!("targets: 1\ndrafts: 2\npolicies: {{routing: {routing}}}\n"));
        let recs: Vec<_> = (0..20).map(|i| rec(5, 5, vec![1, 0], f64::from(i), i % 2)).collect();
        let out = run(&t, &flat_profile(), &recs, 3, false);
        assert!(out.records.iter().all(|r| r.routing_decision == 0));
    }
}

#[test]
fn fused_single_request_tpot_is_decode_latency() {
    let t = topo("targets: 1\npolicies: {window: {kind: fused}}\n");
    let out = run(&t, &flat_profile(), &[rec(10, 11, vec![1], 0.0, 0)], 1, false);
    let r = &out.records[0];
    assert_eq!(r.tpot_ms.unwrap().0, 20.0);
    assert_eq!(r.ttft_ms.0, 23.0);
    assert_eq!(out.stats.network_messages, 0);
}

#[test]
fn fused_single_token_is_one_step() {
    let t = topo("targets: 1\npolicies: {window: {kind: fused}}\n");
    let out = run(&t, &flat_profile(), &[rec(10, 1, vec![1], 0.0, 0)], 1, false);
    assert_eq!(out.records[0].gamma_sequence, vec![0]);
    assert_eq!(out.records[0].e2e_latency_ms.0, 23.0);
    assert_eq!(out.records[0].tpot_ms, None);
}

#[test]
fn zero_output_completes_at_prefill() {
    let t = topo("targets: 1\ndrafts: 1\n");
    let out = run(&t, &flat_profile(), &[rec(10, 0, vec![], 0.0, 0)], 1, false);
    let r = &out.records[0];
    assert_eq!(r.committed_total(), 0);
    assert!(r.e2e_latency_ms.0 >= r.ttft_ms.0);
}

#[test]
fn static_gamma_is_constant() {
    let t = topo("targets: 1\ndrafts: 1\n");
    let out = run(&t, &flat_profile(), &[rec(10, 200, vec![1, 1, 0, 1, 0, 0], 0.0, 0)], 1, false);
    assert!(out.records[0].gamma_sequence.iter().all(|&g| g == 4));
}

#[test]
fn all_ones_iteration_count() {
    for g in 1..=12u32 {
        let t = topo(&format!("targets: 1\ndrafts: 1\npolicies: {{window: {{kind: static, gamma: {g}}}}}\n"));
        for out_len in [1u32, 7, 50, 97] {
            let o = run(&t, &flat_profile(), &[rec(8, out_len, vec![1], 0.0, 0)], 1, false);
            let r = &o.records[0];
            assert_eq!(r.gamma_sequence.len() as u32, out_len.div_ceil(g + 1), "g={g} n={out_len}");
            assert_eq!(r.acceptance_ratio, Some(1.0));
        }
    }
}

#[test]
fn rtt_lengthens_distributed_requests() {
    let p = flat_profile();
    let recs = [rec(10, 30, vec![1, 1, 0], 0.0, 0)];
    let e2e = |rtt: f64| {
        let t = topo(&format!("targets: 1\ndrafts: 1\nnetwork: {{rtt_ms: {rtt}}}\n"));
        run(&t, &p, &recs, 1, false).records[0].e2e_latency_ms.0
    };
    assert!(e2e(0.0) < e2e(10.0) && e2e(10.0) < e2e(50.0));
}

fn busy_intervals_disjoint(events: &[LogEvent]) -> bool {
    let mut open: HashMap<(Role, u32), u64> = HashMap::new();
    let mut last_end: HashMap<(Role, u32), u64> = HashMap::new();
    for e in events {
        let key = match (e.role, e.server_id) {
            (Some(r), Some(s)) => (r, s),
            _ => continue,
        };
        match e.event.as_str() {
            "batch_start" => {
                if open.contains_key(&key) || last_end.get(&key).is_some_and(|&t| t > e.t_us) {
                    return false;
                }
                open.insert(key, e.t_us);
            }
            "batch_end" => {
                if open.remove(&key).is_none() {
                    return false;
                }
                last_end.insert(key, e.t_us);
            }
            _ => {}
        }
    }
    open.is_empty()
}

fn mixed_workload(n: usize, drafts: u32, seed: u64) -> Vec<TraceRecord> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += rng.random_range(0.0..20.0);
            let out = rng.random_range(0..120);
            let bits = (0..rng.random_range(1..30)).map(|_| u8::from(rng.random_bool(0.7))).collect();
            rec(rng.random_range(1..600), out, bits, t, rng.random_range(0..drafts))
        })
        .collect()
}

#[test]
fn batches_never_overlap_on_a_server() {
    let t = topo("targets: 2\ndrafts: 6\nnetwork: {rtt_ms: 10, jitter_ms: 4}\npolicies: {batching: {kind: lab, max_batch_size: 4, window_ms: 2}}\n");
    let p = synth_profile(&SynthSpec::target_and_draft(
        specsim::topology::default_target_entry("target", "default"),
        "draft",
        "default",
        0.1,
    ))
    .unwrap();
    let out = run(&t, &p, &mixed_workload(300, 6, 4), 9, true);
    assert!(busy_intervals_disjoint(&out.events));
    assert_eq!(out.records.len(), 300);
}

#[test]
fn reproducible_with_same_seed() {
    let t = topo("targets: 3\ndrafts: 5\nnetwork: {rtt_ms: 20, jitter_ms: 6}\npolicies: {routing: random}\n");
    let p = flat_profile();
    let recs = mixed_workload(200, 5, 8);
    let a = run(&t, &p, &recs, 77, false).report("x".into(), 77).to_json();
    let b = run(&t, &p, &recs, 77, false).report("x".into(), 77).to_json();
    assert_eq!(a, b);
    let c = run(&t, &p, &recs, 78, false).report("x".into(), 78).to_json();
    assert_ne!(a, c);
}

#[test]
fn fused_metrics_ignore_the_link() {
    let p = flat_profile();
    let recs = mixed_workload(150, 1, 2);
    let reports: Vec<String> = [0.0, 10.0, 100.0]
        .iter()
        .map(|rtt| {
            let t = topo(&format!(
                "targets: 2\ndrafts: 1\nnetwork: {{rtt_ms: {rtt}, jitter_ms: {}}}\npolicies: {{window: {{kind: fused}}}}\n",
                rtt / 4.0
            ));
            let o = run(&t, &p, &recs, 5, false);
            serde_json::to_string(&o.report(String::new(), 5)).unwrap()
        })
        .collect();
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn overload_grows_latency() {
    // one target serving ~45 ms requests; arrivals every 10 ms
    let t = topo("targets: 1\npolicies: {window: {kind: fused}, batching: {max_batch_size: 1}}\n");
    let recs: Vec<_> = (0..200).map(|i| rec(4, 2, vec![1], f64::from(i) * 10.0, 0)).collect();
    let out = run(&t, &flat_profile(), &recs, 1, false);
    let e2e: Vec<f64> = out.records.iter().map(|r| r.e2e_latency_ms.0).collect();
    assert!(e2e.windows(2).all(|w| w[1] >= w[0]));
    assert!(e2e[199] > 10.0 * e2e[0]);
}

#[test]
fn jsq_balances_outstanding_requests() {
    let t = topo("targets: 4\ndrafts: 4\npolicies: {routing: jsq}\n");
    let recs: Vec<_> = (0..4).map(|i| rec(4, 50, vec![1], 0.0, i)).collect();
    let out = run(&t, &flat_profile(), &recs, 1, false);
    let mut targets: Vec<u32> = out.records.iter().map(|r| r.routing_decision).collect();
    targets.sort_unstable();
    assert_eq!(targets, vec![0, 1, 2, 3]);
}

#[test]
fn awc_without_model_is_rejected() {
    let t = topo("targets: 1\ndrafts: 1\npolicies: {window: {kind: awc, model: m.json}}\n");
    let r = simulate(SimInput {
        topology: &t,
        profile: &flat_profile(),
        records: &[rec(1, 1, vec![1], 0.0, 0)],
        arrival: ArrivalMode::TraceDriven,
        seed: 0,
        awc_model: None,
        options: SimOptions::default(),
    });
    assert!(r.is_err());
}

#[test]
fn drafter_out_of_range_is_rejected() {
    let t = topo("targets: 1\ndrafts: 2\n");
    let r = simulate(SimInput {
        topology: &t,
        profile: &flat_profile(),
        records: &[rec(1, 1, vec![1], 0.0, 5)],
        arrival: ArrivalMode::TraceDriven,
        seed: 0,
        awc_model: None,
        options: SimOptions::default(),
    });
    assert!(r.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tokens_are_conserved(
        seed in 0u64..1000,
        gamma in 1u32..=12,
        routing in prop_oneof![Just(RoutingKind::Random), Just(RoutingKind::RoundRobin), Just(RoutingKind::Jsq)],
        batching in prop_oneof![Just(BatchingKind::Fifo), Just(BatchingKind::Lab)],
    ) {
        let mut t = topo("targets: 3\ndrafts: 4\nnetwork: {rtt_ms: 10, jitter_ms: 2}\n");
        t.policy_config.routing = routing;
        t.policy_config.batching.kind = batching;
        t.policy_config.window = WindowConfig::Static { gamma };
        let recs = mixed_workload(60, 4, seed);
        let out = run(&t, &flat_profile(), &recs, seed, false);
        for (r, tr) in out.records.iter().zip(&recs) {
            prop_assert_eq!(r.committed_total(), u64::from(tr.output_length));
            prop_assert_eq!(r.gamma_sequence.len(), r.committed_sequence.len());
            for &c in &r.committed_sequence {
                prop_assert!((1..=gamma + 1).contains(&c), "c={} seq={:?} gam={:?} out={}", c, r.committed_sequence, r.gamma_sequence, tr.output_length);
            }
            prop_assert!(r.e2e_latency_ms.0 >= r.ttft_ms.0);
            if let Some(a) = r.acceptance_ratio {
                prop_assert!((0.0..=1.0).contains(&a));
            }
        }
    }
}
