//! Discrete-event core: simulation clock, ordered event queue, seeded random
//! streams and trace recording.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is a monotone counter
//! assigned at scheduling time, so simultaneous events always dispatch in the
//! order they were scheduled. A run is a pure function of the scenario and
//! the seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::Add;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Microseconds since simulation start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond; negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1e6).round().max(0.0) as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Microseconds elapsed since `earlier`, zero if `earlier` is later.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

/// Adds a duration in microseconds.
impl Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, us: u64) -> SimTime {
        SimTime(self.0 + us)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Index of a device within one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub u32);

impl DeviceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Opaque handle of a transmission registered with the radio medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// A node (or the relay) starts a new advertising event.
    AdvertiseStart,
    /// Next PDU of an advertising event goes on air.
    PduStart,
    /// A transmission leaves the air; capture decisions are taken here.
    TxEnd(TxId),
    /// Scanner moves to the next advertising channel.
    ChannelHop,
    ScanWindowEnd,
    /// Relay listen phase is over.
    ListenEnd,
    /// Relay emits the next batched echo.
    ForwardSlot,
    ForwardDone,
    SleepEnd,
    /// Gateway processing dead time is over.
    GatewayFree,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::AdvertiseStart => "advertise-start",
            EventKind::PduStart => "pdu-start",
            EventKind::TxEnd(_) => "tx-end",
            EventKind::ChannelHop => "channel-hop",
            EventKind::ScanWindowEnd => "scan-window-end",
            EventKind::ListenEnd => "listen-end",
            EventKind::ForwardSlot => "forward-slot",
            EventKind::ForwardDone => "forward-done",
            EventKind::SleepEnd => "sleep-end",
            EventKind::GatewayFree => "gateway-free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: DeviceId,
    pub kind: EventKind,
}

// BinaryHeap is a max-heap: invert so the smallest (fire_at, seq) pops first.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("empty draw range: lo {lo} > hi {hi}")]
    InvalidRange { lo: String, hi: String },
}

/// Pending events plus the simulation clock.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Number of events popped so far.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Schedules an event; scheduling at the current clock is allowed.
    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: DeviceId,
        kind: EventKind,
    ) -> Result<Event, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::ScheduleInPast { at: fire_at, now: self.now });
        }
        let event = Event { fire_at, seq: self.next_seq, target, kind };
        self.next_seq += 1;
        self.heap.push(event);
        Ok(event)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.fire_at)
    }

    /// Pops the next event and advances the clock to its time.
    pub fn pop_next(&mut self) -> Option<Event> {
        let event = self.heap.pop()?;
        debug_assert!(event.fire_at >= self.now);
        self.now = event.fire_at;
        self.dispatched += 1;
        Some(event)
    }

    /// Pops the next event only if it fires strictly before `end`.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event> {
        match self.peek_time() {
            Some(t) if t < end => self.pop_next(),
            _ => None,
        }
    }

    /// Moves the clock forward without dispatching anything.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

/// Per-device seeded random stream.
///
/// Each `(seed, stream_id)` pair selects an independent ChaCha8 keystream, so
/// adding a device never shifts the draws seen by another one.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    /// Stream keyed by a stable device name and a purpose tag.
    pub fn for_device(seed: u64, device: &str, purpose: &str) -> Self {
        Self::new(seed, stream_key(device, purpose))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform integer in the closed range `[lo, hi]`.
    pub fn uniform_u64(&mut self, lo: u64, hi: u64) -> Result<u64, EngineError> {
        if lo > hi {
            return Err(EngineError::InvalidRange { lo: lo.to_string(), hi: hi.to_string() });
        }
        if lo == hi {
            return Ok(lo);
        }
        Ok(self.rng.random_range(lo..=hi))
    }

    /// Uniform float in the closed range `[lo, hi]`.
    pub fn uniform_f64(&mut self, lo: f64, hi: f64) -> Result<f64, EngineError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(EngineError::InvalidRange { lo: lo.to_string(), hi: hi.to_string() });
        }
        if lo == hi {
            return Ok(lo);
        }
        Ok(self.rng.random_range(lo..=hi))
    }

    /// Bernoulli trial. Certain outcomes (p <= 0 or p >= 1) consume no draw.
    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.rng.random::<f64>() < p
        }
    }
}

/// 64-bit FNV-1a over `device`, a separator, and `purpose`.
fn stream_key(device: &str, purpose: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    device
        .bytes()
        .chain(std::iter::once(0xff))
        .chain(purpose.bytes())
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Tab-separated dispatch log: `time_us  device  kind  detail`.
#[derive(Debug, Default, Clone)]
pub struct Trace {
    enabled: bool,
    buf: String,
    lines: usize,
}

impl Trace {
    pub fn enabled() -> Self {
        Self { enabled: true, ..Self::default() }
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn record(&mut self, at: SimTime, device: &str, kind: &str, detail: &str) {
        if !self.enabled {
            return;
        }
        use std::fmt::Write;
        let _ = writeln!(self.buf, "{}\t{}\t{}\t{}", at.as_micros(), device, kind, detail);
        self.lines += 1;
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

/// Something that reacts to dispatched events.
pub trait Model {
    /// Handles one event. The returned pair is `(device name, detail)` for the trace.
    fn handle(&mut self, event: Event, queue: &mut EventQueue) -> (String, String);
}

/// Dispatches every event with `fire_at < end` in key order, then sets the
/// clock to `end`. Returns the number of events dispatched by this call.
pub fn run_until<M: Model>(
    model: &mut M,
    queue: &mut EventQueue,
    end: SimTime,
    trace: &mut Trace,
) -> u64 {
    let mut count = 0;
    while let Some(event) = queue.pop_until(end) {
        let (device, detail) = model.handle(event, queue);
        trace.record(event.fire_at, &device, event.kind.name(), &detail);
        count += 1;
    }
    queue.advance_to(end);
    count
}
