//! Event-driven simulation of draft and target servers.
//!
//! Distributed lifecycle per request: arrive at the drafter, route to a
//! target, ship the prompt to the target (one-way delay) while the drafter
//! prefills locally, then iterate draft -> send -> verify -> return until
//! `output_length` tokens are committed. Fused requests run entirely on
//! the target with no network traffic: prefill then one decode step per
//! token.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::awc::{extract_features, AwcModel, FeatureVector};
use crate::error::{Error, Result};
use crate::latency::{BatchShape, LatencyProfile, OpKind};
use crate::metrics::{
    emit_report, finalize_request, Analyzer, MetricsRecord, Report, RequestOutcome, RunStats,
};
use crate::policies::{BatchingConfig, Router, WindowController, WindowDecision};
use crate::sim::{EventKind, Kernel, RngStream, SimTime, StreamId};
use crate::topology::{LinkSpec, Pair, Role, Topology};
use crate::workload::{arrival_times, bind_drafters, ArrivalMode, TraceRecord};

/// One-way delay in microseconds: `rtt/2` plus uniform jitter in
/// `[-jitter/2, jitter/2]`, floored at zero.
pub fn net_delay(link: LinkSpec, rng: &mut impl Rng) -> u64 {
    let mut ms = link.rtt_ms / 2.0;
    if link.jitter_ms > 0.0 {
        ms += rng.random_range(-link.jitter_ms / 2.0..=link.jitter_ms / 2.0);
    }
    SimTime::from_ms(ms.max(0.0)).micros()
}

/// Outcome of verifying one proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub proposed: u32,
    pub accepted_count: u32,
    /// Accepted drafts plus the correction or bonus token.
    pub committed_tokens: u32,
    pub all_accepted: bool,
    /// Acceptance bits read.
    pub consumed: u32,
}

/// Reads bits from `cursor` (wrapping around) until the first 0 or
/// `gamma` ones.
pub fn verify(bits: &[u8], cursor: &mut usize, gamma: u32) -> VerifyResult {
    assert!(gamma >= 1, "verification needs at least one proposal");
    let mut accepted = 0;
    let mut consumed = 0;
    while accepted < gamma {
        let b = if bits.is_empty() {
            0
        } else {
            bits[*cursor % bits.len()]
        };
        *cursor = cursor.wrapping_add(1);
        consumed += 1;
        if b == 0 {
            break;
        }
        accepted += 1;
    }
    if !bits.is_empty() {
        *cursor %= bits.len();
    }
    VerifyResult {
        proposed: gamma,
        accepted_count: accepted,
        committed_tokens: accepted + 1,
        all_accepted: accepted == gamma,
        consumed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReqState {
    Arrived,
    Routed,
    QueuedPrefill,
    Speculating,
    InFlightToTarget,
    Verifying,
    InFlightToDraft,
    Done,
}

/// One line of the optional event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub t_us: u64,
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub server_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<ReqState>,
}

pub fn write_event_log(events: &[LogEvent], mut w: impl Write) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub event_log: bool,
    /// Reservoir size for feature vectors captured at window decisions.
    pub feature_samples: usize,
}

pub struct SimInput<'a> {
    pub topology: &'a Topology,
    pub profile: &'a LatencyProfile,
    pub records: &'a [TraceRecord],
    pub arrival: ArrivalMode,
    pub seed: u64,
    pub awc_model: Option<Arc<AwcModel>>,
    pub options: SimOptions,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub outcomes: Vec<RequestOutcome>,
    pub records: Vec<MetricsRecord>,
    pub stats: RunStats,
    pub events: Vec<LogEvent>,
    pub features: Vec<FeatureVector>,
}

impl SimOutput {
    pub fn report(&self, config_digest: String, seed: u64) -> Report {
        emit_report(self.records.clone(), &self.stats, config_digest, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Work {
    Prefill,
    Draft { gamma: u32 },
    Verify { gamma: u32 },
    FusedStep,
}

#[derive(Debug, Clone, Copy)]
struct Item {
    req: usize,
    work: Work,
    enqueued: SimTime,
    from_net: bool,
}

#[derive(Debug, Clone, Copy)]
enum Msg {
    Prompt,
    Proposal { gamma: u32 },
    Result(VerifyResult),
    ToFused,
    ToDistributed { gamma: u32 },
}

#[derive(Debug, Clone, Copy)]
enum Payload {
    Arrival(usize),
    Net { req: usize, msg: Msg, delay_us: u64 },
    Done { role: Role, server: u32 },
    BatchReady { server: u32, generation: u64 },
}

#[derive(Debug)]
struct Server {
    queue: VecDeque<Item>,
    busy: bool,
    running: Vec<Item>,
    busy_us: u64,
    window_generation: u64,
    window_deadline: Option<SimTime>,
}

impl Server {
    fn new() -> Self {
        Server {
            queue: VecDeque::new(),
            busy: false,
            running: Vec::new(),
            busy_us: 0,
            window_generation: 0,
            window_deadline: None,
        }
    }
}

#[derive(Debug)]
struct Req {
    drafter: Option<u32>,
    target: u32,
    prompt: u32,
    output: u32,
    tokens_done: u32,
    cursor: usize,
    target_prefilled: bool,
    fused: bool,
    parked: Option<Item>,
    gamma: u32,
    out_delay_us: u64,
    state: ReqState,
    outcome: RequestOutcome,
}

impl Req {
    fn remaining(&self) -> u32 {
        self.output - self.tokens_done
    }

    fn context(&self) -> u32 {
        self.prompt + self.tokens_done
    }

    fn pair(&self) -> Option<Pair> {
        self.drafter.map(|d| Pair::new(d, self.target))
    }
}

struct Sim<'a> {
    topo: &'a Topology,
    profile: &'a LatencyProfile,
    records: &'a [TraceRecord],
    kernel: Kernel<Payload>,
    analyzer: Analyzer,
    router: Router,
    window: WindowController,
    batching: BatchingConfig,
    jitter: RngStream,
    sampler: RngStream,
    drafts: Vec<Server>,
    targets: Vec<Server>,
    reqs: Vec<Req>,
    stats: RunStats,
    options: SimOptions,
    events: Vec<LogEvent>,
    features: Vec<FeatureVector>,
    decisions_seen: u64,
}

/// Runs one simulation to completion.
pub fn simulate(input: SimInput<'_>) -> Result<SimOutput> {
    let topo = input.topology;
    topo.check_profile(input.profile)?;
    topo.policy_config.validate()?;
    for (i, r) in input.records.iter().enumerate() {
        r.validate(i)?;
    }
    bind_drafters(input.records, topo.n_drafts())?;
    let pc = &topo.policy_config;
    let window = WindowController::new(&pc.window, pc.bounds(), input.awc_model)?;
    if !matches!(window, WindowController::Fused) && topo.n_drafts() == 0 {
        return Err(Error::Config(format!(
            "window policy `{}` needs at least one draft device",
            pc.window.label()
        )));
    }
    let seed = input.seed;
    let mut sim = Sim {
        topo,
        profile: input.profile,
        records: input.records,
        kernel: Kernel::new(),
        analyzer: Analyzer::new(topo),
        router: Router::new(pc.routing, pc.jsq_depth, RngStream::new(seed, StreamId::Routing)),
        window,
        batching: pc.batching,
        jitter: RngStream::new(seed, StreamId::Jitter),
        sampler: RngStream::new(seed, StreamId::Custom("feature-sampling")),
        drafts: (0..topo.n_drafts()).map(|_| Server::new()).collect(),
        targets: (0..topo.n_targets()).map(|_| Server::new()).collect(),
        reqs: Vec::with_capacity(input.records.len()),
        stats: RunStats {
            requests_submitted: input.records.len() as u64,
            target_busy_us: vec![0; topo.n_targets()],
            ..RunStats::default()
        },
        options: input.options,
        events: Vec::new(),
        features: Vec::new(),
        decisions_seen: 0,
    };
    let mut arrivals_rng = RngStream::new(seed, StreamId::Arrivals);
    let times = arrival_times(input.records, input.arrival, &mut arrivals_rng)?;
    for (i, t) in times.iter().enumerate() {
        let r = &input.records[i];
        sim.reqs.push(Req {
            drafter: None,
            target: 0,
            prompt: r.prompt_length,
            output: r.output_length,
            tokens_done: 0,
            cursor: 0,
            target_prefilled: false,
            fused: false,
            parked: None,
            gamma: 0,
            out_delay_us: 0,
            state: ReqState::Arrived,
            outcome: RequestOutcome {
                request_id: i as u64,
                output_length: r.output_length,
                arrival: *t,
                ..RequestOutcome::default()
            },
        });
        sim.kernel.schedule(*t, EventKind::RequestArrival, Payload::Arrival(i))?;
    }
    while let Some(ev) = sim.kernel.pop() {
        sim.handle(ev.payload)?;
    }
    sim.finish()
}

impl<'a> Sim<'a> {
    fn now(&self) -> SimTime {
        self.kernel.now()
    }

    fn log(&mut self, event: &str, req: Option<usize>, server: Option<(Role, u32)>) {
        if !self.options.event_log {
            return;
        }
        self.events.push(LogEvent {
            t_us: self.now().micros(),
            event: event.to_string(),
            request_id: req.map(|r| r as u64),
            server_id: server.map(|s| s.1),
            role: server.map(|s| s.0),
            state: req.map(|r| self.reqs[r].state),
        });
    }

    fn set_state(&mut self, req: usize, state: ReqState) {
        self.reqs[req].state = state;
        let server = match state {
            ReqState::Speculating | ReqState::Arrived => self.reqs[req].drafter.map(|d| (Role::Draft, d)),
            _ => Some((Role::Target, self.reqs[req].target)),
        };
        self.log("state", Some(req), server);
    }

    fn handle(&mut self, p: Payload) -> Result<()> {
        match p {
            Payload::Arrival(r) => self.on_arrival(r),
            Payload::Net { req, msg, delay_us } => self.on_message(req, msg, delay_us),
            Payload::Done { role, server } => self.on_done(role, server),
            Payload::BatchReady { server, generation } => {
                if self.targets[server as usize].window_generation == generation {
                    self.try_start(Role::Target, server)?;
                }
                Ok(())
            }
        }
    }

    fn on_arrival(&mut self, r: usize) -> Result<()> {
        let now = self.now();
        self.stats.first_arrival.get_or_insert(now);
        self.set_state(r, ReqState::Arrived);
        let target = self.router.route(&self.analyzer.snapshot(now));
        let output = self.reqs[r].output;
        self.analyzer.on_assign(target, output);
        let fused_only = matches!(self.window, WindowController::Fused);
        let req = &mut self.reqs[r];
        req.target = target as u32;
        req.outcome.target_id = target as u32;
        self.set_state(r, ReqState::Routed);
        if fused_only {
            self.reqs[r].fused = true;
            self.enqueue(Role::Target, target as u32, r, Work::Prefill, false)?;
        } else {
            let d = self.records[r].drafter_id;
            self.reqs[r].drafter = Some(d);
            self.send(r, Msg::Prompt);
            self.enqueue(Role::Draft, d, r, Work::Prefill, false)?;
        }
        self.set_state(r, ReqState::QueuedPrefill);
        Ok(())
    }

    fn link(&self, r: usize) -> LinkSpec {
        self.reqs[r]
            .pair()
            .map_or(self.topo.default_link, |p| self.topo.link(p))
    }

    fn send(&mut self, r: usize, msg: Msg) {
        let delay_us = net_delay(self.link(r), &mut self.jitter);
        self.kernel
            .schedule_in(delay_us, EventKind::NetArrive, Payload::Net { req: r, msg, delay_us });
    }

    fn on_message(&mut self, r: usize, msg: Msg, delay_us: u64) -> Result<()> {
        self.stats.network_messages += 1;
        let target = self.reqs[r].target;
        match msg {
            Msg::Prompt => self.enqueue(Role::Target, target, r, Work::Prefill, true)?,
            Msg::Proposal { gamma } => {
                self.reqs[r].out_delay_us = delay_us;
                self.set_state(r, ReqState::Verifying);
                self.enqueue_after_prefill(r, Work::Verify { gamma })?;
            }
            Msg::ToFused => {
                self.reqs[r].fused = true;
                self.enqueue_after_prefill(r, Work::FusedStep)?;
            }
            Msg::ToDistributed { gamma } => {
                self.reqs[r].fused = false;
                self.start_draft(r, gamma)?;
            }
            Msg::Result(v) => self.on_result(r, v, delay_us)?,
        }
        Ok(())
    }

    fn enqueue_after_prefill(&mut self, r: usize, work: Work) -> Result<()> {
        let item = Item {
            req: r,
            work,
            enqueued: self.now(),
            from_net: true,
        };
        if self.reqs[r].target_prefilled {
            let t = self.reqs[r].target;
            self.push(Role::Target, t, item)
        } else {
            self.reqs[r].parked = Some(item);
            Ok(())
        }
    }

    fn enqueue(&mut self, role: Role, server: u32, r: usize, work: Work, from_net: bool) -> Result<()> {
        let item = Item {
            req: r,
            work,
            enqueued: self.now(),
            from_net,
        };
        self.push(role, server, item)
    }

    fn push(&mut self, role: Role, server: u32, item: Item) -> Result<()> {
        self.server_mut(role, server).queue.push_back(item);
        self.try_start(role, server)
    }

    fn server_mut(&mut self, role: Role, id: u32) -> &mut Server {
        match role {
            Role::Draft => &mut self.drafts[id as usize],
            Role::Target => &mut self.targets[id as usize],
        }
    }

    fn device(&self, role: Role, id: u32) -> (&'a str, &'a str) {
        let d = match role {
            Role::Draft => &self.topo.drafts[id as usize],
            Role::Target => &self.topo.targets[id as usize],
        };
        (&d.model, &d.hardware)
    }

    fn predict(&mut self, role: Role, server: u32, op: OpKind, shape: BatchShape) -> Result<u64> {
        let (model, hw) = self.device(role, server);
        let p = self.profile.predict(op, shape, model, hw)?;
        if p.extrapolated {
            self.stats.extrapolated_predictions += 1;
        }
        Ok(SimTime::from_ms(p.latency_ms).micros().max(1))
    }

    /// Starts the next batch if the server is idle, honouring the
    /// batching window on targets.
    fn try_start(&mut self, role: Role, id: u32) -> Result<()> {
        let now = self.now();
        let batching = self.batching;
        let s = self.server_mut(role, id);
        if s.busy || s.queue.is_empty() {
            return Ok(());
        }
        if role == Role::Target && batching.window_ms > 0.0 && s.queue.len() < batching.max_batch_size {
            match s.window_deadline {
                None => {
                    let deadline = now + SimTime::from_ms(batching.window_ms).micros();
                    s.window_deadline = Some(deadline);
                    let generation = s.window_generation;
                    self.kernel.schedule(
                        deadline,
                        EventKind::BatchReady,
                        Payload::BatchReady { server: id, generation },
                    )?;
                    return Ok(());
                }
                Some(d) if now < d => return Ok(()),
                Some(_) => {}
            }
        }
        let members = match role {
            Role::Draft => vec![s.queue.pop_front().expect("non-empty")],
            Role::Target => self.select_batch(id),
        };
        self.start_batch(role, id, members)
    }

    fn select_batch(&mut self, id: u32) -> Vec<Item> {
        let is_prefill = |w: Work| matches!(w, Work::Prefill);
        let s = &self.targets[id as usize];
        let head_class = is_prefill(s.queue[0].work);
        let candidates: Vec<usize> = (0..s.queue.len())
            .filter(|&i| is_prefill(s.queue[i].work) == head_class)
            .collect();
        let lengths: Vec<u32> = candidates
            .iter()
            .map(|&i| {
                let req = &self.reqs[s.queue[i].req];
                if head_class {
                    req.prompt
                } else {
                    req.remaining()
                }
            })
            .collect();
        let mut picked: Vec<usize> = self
            .batching
            .select(&lengths)
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        picked.sort_unstable();
        let s = &mut self.targets[id as usize];
        let mut members = Vec::with_capacity(picked.len());
        for &i in picked.iter().rev() {
            members.push(s.queue.remove(i).expect("picked index in range"));
        }
        members.reverse();
        members
    }

    fn start_batch(&mut self, role: Role, id: u32, members: Vec<Item>) -> Result<()> {
        let now = self.now();
        let b = members.len() as u32;
        let max_ctx = members.iter().map(|m| self.reqs[m.req].context()).max().unwrap_or(0);
        let (op, shape) = match members[0].work {
            Work::Prefill => {
                let p = members.iter().map(|m| self.reqs[m.req].prompt).max().unwrap_or(1);
                (OpKind::Prefill, BatchShape::new(b, p, 0))
            }
            Work::Draft { gamma } => (OpKind::Decode, BatchShape::new(1, gamma, max_ctx)),
            Work::Verify { .. } | Work::FusedStep => {
                let tokens = members
                    .iter()
                    .map(|m| match m.work {
                        Work::Verify { gamma } => gamma,
                        _ => 1,
                    })
                    .max()
                    .unwrap_or(1);
                let any_verify = members.iter().any(|m| matches!(m.work, Work::Verify { .. }));
                let op = if any_verify { OpKind::Verify } else { OpKind::Decode };
                (op, BatchShape::new(b, tokens, max_ctx))
            }
        };
        let dur = self.predict(role, id, op, shape)?;
        for m in &members {
            if m.from_net {
                self.stats.network_queueing_us += now.saturating_sub(m.enqueued).micros();
            }
        }
        for m in &members {
            if matches!(m.work, Work::Verify { .. }) {
                self.reqs[m.req].state = ReqState::Verifying;
            }
        }
        let s = self.server_mut(role, id);
        s.busy = true;
        s.busy_us += dur;
        s.running = members;
        s.window_deadline = None;
        s.window_generation += 1;
        self.log("batch_start", None, Some((role, id)));
        self.kernel
            .schedule_in(dur, EventKind::ComputeDone, Payload::Done { role, server: id });
        Ok(())
    }

    fn on_done(&mut self, role: Role, id: u32) -> Result<()> {
        self.log("batch_end", None, Some((role, id)));
        let s = self.server_mut(role, id);
        s.busy = false;
        let members = std::mem::take(&mut s.running);
        for m in members {
            match (role, m.work) {
                (Role::Target, Work::Prefill) => self.target_prefilled(m.req)?,
                (Role::Draft, Work::Prefill) => self.draft_prefilled(m.req)?,
                (Role::Draft, Work::Draft { gamma }) => {
                    self.set_state(m.req, ReqState::InFlightToTarget);
                    self.send(m.req, Msg::Proposal { gamma });
                }
                (Role::Target, Work::Verify { gamma }) => {
                    let req = &mut self.reqs[m.req];
                    let mut v = verify(&self.records[m.req].acceptance_seq, &mut req.cursor, gamma);
                    v.committed_tokens = v.committed_tokens.min(req.remaining());
                    self.set_state(m.req, ReqState::InFlightToDraft);
                    self.send(m.req, Msg::Result(v));
                }
                (Role::Target, Work::FusedStep) => self.fused_step_done(m.req)?,
                (r, w) => unreachable!("{w:?} scheduled on a {r:?} server"),
            }
        }
        self.try_start(role, id)
    }

    fn target_prefilled(&mut self, r: usize) -> Result<()> {
        let req = &mut self.reqs[r];
        req.target_prefilled = true;
        if req.outcome.completion.is_some() {
            return Ok(());
        }
        if req.output == 0 {
            return self.complete(r);
        }
        if let Some(item) = req.parked.take() {
            let t = req.target;
            return self.push(Role::Target, t, item);
        }
        if req.drafter.is_none() {
            let t = req.target;
            self.enqueue(Role::Target, t, r, Work::FusedStep, false)?;
        }
        Ok(())
    }

    fn draft_prefilled(&mut self, r: usize) -> Result<()> {
        // empty outputs finish at the target's prefill
        if self.reqs[r].output == 0 {
            return Ok(());
        }
        self.next_iteration(r)
    }

    fn decide(&mut self, r: usize) -> WindowDecision {
        let pair = self.reqs[r].pair().expect("decisions need a drafter");
        let snapshot = self.analyzer.snapshot(self.kernel.now());
        if self.options.feature_samples > 0 {
            let f = extract_features(&snapshot, pair, self.window.gamma_init());
            let k = self.options.feature_samples as u64;
            let n = self.decisions_seen;
            if n < k {
                self.features.push(f);
            } else {
                let j = self.sampler.random_range(0..=n);
                if j < k {
                    self.features[j as usize] = f;
                }
            }
            self.decisions_seen += 1;
        }
        let d = self.window.decide(pair, &snapshot);
        self.analyzer.on_decision(pair, d.gamma().unwrap_or(1));
        d
    }

    /// Window decision at the drafter for the next iteration.
    fn next_iteration(&mut self, r: usize) -> Result<()> {
        match self.decide(r) {
            WindowDecision::Distributed { gamma } => self.start_draft(r, gamma),
            WindowDecision::Fused => {
                self.send(r, Msg::ToFused);
                Ok(())
            }
        }
    }

    fn start_draft(&mut self, r: usize, gamma: u32) -> Result<()> {
        self.reqs[r].gamma = gamma;
        self.set_state(r, ReqState::Speculating);
        let d = self.reqs[r].drafter.expect("distributed request has a drafter");
        self.enqueue(Role::Draft, d, r, Work::Draft { gamma }, false)
    }

    fn commit(&mut self, r: usize, gamma_code: u32, tokens: u32) {
        let now = self.now();
        let req = &mut self.reqs[r];
        req.tokens_done += tokens;
        req.outcome.gamma_sequence.push(gamma_code);
        req.outcome.committed_sequence.push(tokens);
        req.outcome.first_token.get_or_insert(now);
        let t = req.target as usize;
        self.analyzer.on_tokens_committed(t, tokens);
    }

    fn on_result(&mut self, r: usize, v: VerifyResult, back_us: u64) -> Result<()> {
        let pair = self.reqs[r].pair().expect("results return to a drafter");
        let gamma = self.reqs[r].gamma;
        let out_us = self.reqs[r].out_delay_us;
        {
            let o = &mut self.reqs[r].outcome;
            o.proposed += u64::from(v.proposed);
            o.accepted += u64::from(v.accepted_count);
        }
        self.analyzer.on_verify(pair, v.accepted_count, v.proposed);
        self.analyzer
            .on_round_trip(pair, (out_us + back_us) as f64 / 1000.0);
        self.commit(r, gamma, v.committed_tokens);
        if self.reqs[r].remaining() == 0 {
            return self.complete(r);
        }
        self.next_iteration(r)
    }

    fn fused_step_done(&mut self, r: usize) -> Result<()> {
        self.commit(r, 0, 1);
        if self.reqs[r].remaining() == 0 {
            return self.complete(r);
        }
        let t = self.reqs[r].target;
        if self.reqs[r].drafter.is_none() {
            return self.enqueue(Role::Target, t, r, Work::FusedStep, false);
        }
        match self.decide(r) {
            WindowDecision::Fused => self.enqueue(Role::Target, t, r, Work::FusedStep, false),
            WindowDecision::Distributed { gamma } => {
                self.send(r, Msg::ToDistributed { gamma });
                Ok(())
            }
        }
    }

    fn complete(&mut self, r: usize) -> Result<()> {
        let now = self.now();
        let req = &mut self.reqs[r];
        req.outcome.completion = Some(now);
        req.outcome.first_token.get_or_insert(now);
        let tpot = (req.output >= 2).then(|| {
            now.saturating_sub(req.outcome.first_token.expect("set above")).as_ms()
                / f64::from(req.output - 1)
        });
        let t = req.target as usize;
        self.analyzer.on_complete(t, tpot);
        self.stats.last_completion = Some(now);
        self.set_state(r, ReqState::Done);
        Ok(())
    }

    fn finish(mut self) -> Result<SimOutput> {
        self.stats.target_busy_us = self.targets.iter().map(|s| s.busy_us).collect();
        let outcomes: Vec<RequestOutcome> = self.reqs.into_iter().map(|r| r.outcome).collect();
        let records = outcomes
            .iter()
            .map(finalize_request)
            .collect::<Result<Vec<_>>>()?;
        Ok(SimOutput {
            outcomes,
            records,
            stats: self.stats,
            events: self.events,
            features: self.features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::StreamId;

    #[test]
    fn verify_examples() {
        let mut c = 0;
        let v = verify(&[1, 0, 1, 1, 1], &mut c, 4);
        assert_eq!((v.accepted_count, v.committed_tokens, c), (1, 2, 2));
        let mut c = 0;
        let v = verify(&[0, 1, 1], &mut c, 4);
        assert_eq!((v.accepted_count, v.committed_tokens), (0, 1));
        let mut c = 0;
        let v = verify(&[1, 1, 1, 1], &mut c, 4);
        assert_eq!((v.accepted_count, v.committed_tokens, v.all_accepted), (4, 5, true));
    }

    #[test]
    fn verify_wraps_cursor() {
        let mut c = 2;
        let v = verify(&[1, 0, 1], &mut c, 3);
        // reads index 2, then 0, then 1 (zero)
        assert_eq!(v.accepted_count, 2);
        assert_eq!(c, 2);
    }

    #[test]
    fn delay_without_jitter() {
        let mut rng = RngStream::new(1, StreamId::Jitter);
        let l = LinkSpec {
            rtt_ms: 10.0,
            jitter_ms: 0.0,
        };
        assert_eq!(net_delay(l, &mut rng), 5_000);
        let z = LinkSpec {
            rtt_ms: 0.0,
            jitter_ms: 0.0,
        };
        assert_eq!(net_delay(z, &mut rng), 0);
    }

    #[test]
    fn delay_jitter_statistics() {
        let mut rng = RngStream::new(3, StreamId::Jitter);
        let l = LinkSpec {
            rtt_ms: 30.0,
            jitter_ms: 4.0,
        };
        let xs: Vec<f64> = (0..100_000).map(|_| net_delay(l, &mut rng) as f64 / 1000.0).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 15.0).abs() <= 0.1, "mean {mean}");
        assert!(xs.iter().all(|x| (13.0..=17.0).contains(x)));
    }
}
