//! Deterministic discrete-event kernel.
//!
//! Time is kept in integer microseconds. Events are ordered by
//! `(time, seq)` where `seq` is a queue-global insertion counter, so two
//! runs fed the same inputs pop events in exactly the same order.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Virtual time in microseconds since simulation start.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    /// Converts milliseconds to the nearest microsecond. Negative and
    /// non-finite inputs saturate to zero.
    pub fn from_ms(ms: f64) -> Self {
        if !ms.is_finite() || ms <= 0.0 {
            return SimTime(0);
        }
        SimTime((ms * 1000.0).round() as u64)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, us: u64) -> SimTime {
        SimTime(self.0 + us)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}ms", self.0 / 1000, self.0 % 1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RequestArrival,
    BatchReady,
    ComputeDone,
    NetArrive,
    IterationStart,
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Virtual clock plus a min-ordered event queue.
#[derive(Debug)]
pub struct Kernel<P> {
    clock: SimTime,
    queue: BinaryHeap<Reverse<Event<P>>>,
    next_seq: u64,
    processed: u64,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Kernel {
            clock: SimTime::ZERO,
            queue: BinaryHeap::new(),
            next_seq: 0,
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Inserts an event; returns its sequence number.
    pub fn schedule(&mut self, time: SimTime, kind: EventKind, payload: P) -> Result<u64> {
        if time < self.clock {
            return Err(Error::SchedulingInPast {
                at: time,
                now: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event {
            time,
            seq,
            kind,
            payload,
        }));
        Ok(seq)
    }

    /// Schedules `delay_us` after the current clock. Never fails.
    pub fn schedule_in(&mut self, delay_us: u64, kind: EventKind, payload: P) -> u64 {
        let at = self.clock + delay_us;
        self.schedule(at, kind, payload)
            .expect("relative schedule cannot be in the past")
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(e)| e.time)
    }

    /// Removes the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Event<P>> {
        let Reverse(ev) = self.queue.pop()?;
        assert!(ev.time >= self.clock, "clock moved backwards");
        self.clock = ev.time;
        self.processed += 1;
        Some(ev)
    }

    /// Processes events in order until the queue drains or the next event
    /// lies beyond `end`. Returns the final clock value.
    pub fn run_until<F>(&mut self, end: Option<SimTime>, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, Event<P>),
    {
        while let Some(t) = self.peek_time() {
            if end.is_some_and(|end| t > end) {
                break;
            }
            let ev = self.pop().expect("peeked event exists");
            handler(self, ev);
        }
        self.clock
    }
}

/// Purpose label of a random stream. Each stochastic source owns one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    Arrivals,
    Jitter,
    Routing,
    TrainingShuffle,
    WeightInit,
    Acceptance,
    Lengths,
    DrafterAssignment,
    Scenario,
    Custom(&'static str),
}

impl StreamId {
    pub fn label(self) -> &'static str {
        match self {
            StreamId::Arrivals => "arrivals",
            StreamId::Jitter => "jitter",
            StreamId::Routing => "routing",
            StreamId::TrainingShuffle => "training-shuffle",
            StreamId::WeightInit => "weight-init",
            StreamId::Acceptance => "acceptance",
            StreamId::Lengths => "lengths",
            StreamId::DrafterAssignment => "drafter-assignment",
            StreamId::Scenario => "scenario",
            StreamId::Custom(s) => s,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with arbitrary key material into a derived seed.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(key.as_bytes())))
}

/// Seeded, portable random stream keyed by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: StreamId,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: StreamId) -> Self {
        let derived = derive_seed(seed, stream.label());
        RngStream {
            seed,
            stream,
            inner: ChaCha8Rng::seed_from_u64(derived),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
