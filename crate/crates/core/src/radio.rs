//! The three advertising channels, packet airtime, per-pair reachability and
//! the capture rule.
//!
//! A transmission is captured by a listener iff it arrived there (link draw),
//! the listener sat in `Listening(channel)` for the whole `[start, end)`
//! interval, and no other transmission that also arrived at the listener
//! overlapped it on the same channel. Overlaps destroy both packets; there is
//! no capture effect.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{DeviceId, RngStream, SimTime, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Channel {
    Ch37,
    Ch38,
    Ch39,
}

impl Channel {
    /// Advertising order within one event.
    pub const ALL: [Channel; 3] = [Channel::Ch37, Channel::Ch38, Channel::Ch39];

    pub fn number(self) -> u8 {
        match self {
            Channel::Ch37 => 37,
            Channel::Ch38 => 38,
            Channel::Ch39 => 39,
        }
    }

    pub fn from_number(n: u8) -> Option<Channel> {
        match n {
            37 => Some(Channel::Ch37),
            38 => Some(Channel::Ch38),
            39 => Some(Channel::Ch39),
            _ => None,
        }
    }

    /// 37 -> 38 -> 39 -> 37.
    pub fn next(self) -> Channel {
        match self {
            Channel::Ch37 => Channel::Ch38,
            Channel::Ch38 => Channel::Ch39,
            Channel::Ch39 => Channel::Ch37,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Advertising payload: the originating node's identity plus bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AdvPacket {
    pub origin: DeviceId,
    /// Per-origin advertising event counter.
    pub origin_seq: u64,
    /// Relay counter, present on echoes only.
    pub echo_seq: Option<u64>,
}

impl AdvPacket {
    pub fn original(origin: DeviceId, origin_seq: u64) -> Self {
        Self { origin, origin_seq, echo_seq: None }
    }

    pub fn echo_of(self, echo_seq: u64) -> Self {
        Self { echo_seq: Some(echo_seq), ..self }
    }

    pub fn is_echo(&self) -> bool {
        self.echo_seq.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub id: TxId,
    pub packet: AdvPacket,
    pub channel: Channel,
    pub tx_device: DeviceId,
    pub start: SimTime,
    pub end: SimTime,
}

impl Transmission {
    pub fn overlaps(&self, start: SimTime, end: SimTime) -> bool {
        self.start < end && start < self.end
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MediumError {
    #[error("device {device} started a transmission at {at} while already transmitting")]
    OverlappingTransmission { device: DeviceId, at: SimTime },
    #[error("transmission airtime must be positive")]
    ZeroAirtime,
    #[error("unknown or expired transmission {0:?}")]
    UnknownTransmission(TxId),
    #[error("capture decision requested before transmission {0:?} ended")]
    NotEnded(TxId),
    #[error("link probability {value} for {from} -> {to} is outside [0, 1]")]
    BadProbability { from: DeviceId, to: DeviceId, value: f64 },
    #[error("self link {0} -> {0} must be unreachable")]
    SelfLink(DeviceId),
}

/// Probability that a transmission from one device arrives at another.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMatrix {
    devices: usize,
    reach: Vec<f64>,
}

impl LinkMatrix {
    /// All pairs unreachable.
    pub fn new(devices: usize) -> Self {
        Self { devices, reach: vec![0.0; devices * devices] }
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn set(&mut self, from: DeviceId, to: DeviceId, p: f64) -> Result<(), MediumError> {
        if from == to && p != 0.0 {
            return Err(MediumError::SelfLink(from));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(MediumError::BadProbability { from, to, value: p });
        }
        self.reach[from.index() * self.devices + to.index()] = p;
        Ok(())
    }

    pub fn reach(&self, from: DeviceId, to: DeviceId) -> f64 {
        self.reach[from.index() * self.devices + to.index()]
    }
}

/// What a radio is doing. Only `Listening` can receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RadioState {
    Off,
    /// Low-power phase of a duty cycle.
    Asleep,
    /// Host busy processing a previous reception.
    Busy,
    Listening(Channel),
    Transmitting(Channel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum LossReason {
    NotTuned,
    Collision,
    Unreachable,
    RxBusy,
    Asleep,
}

impl LossReason {
    pub const ALL: [LossReason; 5] = [
        LossReason::NotTuned,
        LossReason::Collision,
        LossReason::Unreachable,
        LossReason::RxBusy,
        LossReason::Asleep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossReason::NotTuned => "not-tuned",
            LossReason::Collision => "collision",
            LossReason::Unreachable => "unreachable",
            LossReason::RxBusy => "rx-busy",
            LossReason::Asleep => "asleep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capture {
    Received,
    Lost(LossReason),
}

/// Radio state changes of one device; each state holds until the next entry.
#[derive(Debug, Clone, Default)]
pub struct Timeline {
    entries: Vec<(SimTime, RadioState)>,
}

impl Timeline {
    fn new() -> Self {
        Self { entries: vec![(SimTime::ZERO, RadioState::Off)] }
    }

    fn set(&mut self, at: SimTime, state: RadioState) {
        let last = *self.entries.last().expect("timeline never empty");
        assert!(at >= last.0, "radio state change at {at} precedes {}", last.0);
        if last.0 == at {
            self.entries.pop();
            // collapse a change that reverts to the state before it
            if self.entries.last().map(|e| e.1) == Some(state) {
                return;
            }
        } else if last.1 == state {
            return;
        }
        self.entries.push((at, state));
    }

    pub fn current(&self) -> RadioState {
        self.entries.last().expect("timeline never empty").1
    }

    /// States in effect at some point of `[start, end)`.
    pub fn states_during(&self, start: SimTime, end: SimTime) -> impl Iterator<Item = RadioState> + '_ {
        // last entry at or before `start`
        let first = self.entries.partition_point(|e| e.0 <= start).saturating_sub(1);
        self.entries[first..].iter().take_while(move |e| e.0 < end).map(|e| e.1)
    }

    /// Half-open segments `[from, to)`; the last one ends at `until`.
    pub fn segments(&self, until: SimTime) -> Vec<(SimTime, SimTime, RadioState)> {
        let mut out = Vec::with_capacity(self.entries.len());
        for (i, &(from, state)) in self.entries.iter().enumerate() {
            let to = self.entries.get(i + 1).map_or(until, |e| e.0);
            if from < to {
                out.push((from, to, state));
            }
        }
        out
    }

    /// Drops entries that ended before `cutoff`, keeping the one in effect then.
    fn prune(&mut self, cutoff: SimTime) {
        let keep_from = self.entries.partition_point(|e| e.0 <= cutoff).saturating_sub(1);
        if keep_from > 0 {
            self.entries.drain(..keep_from);
        }
    }
}

#[derive(Debug, Clone)]
struct OnAir {
    tx: Transmission,
    /// Indexed like `Medium::listeners`.
    arrives: Vec<bool>,
}

/// Shared air for one simulation run.
#[derive(Debug, Clone)]
pub struct Medium {
    link: LinkMatrix,
    listeners: Vec<DeviceId>,
    timelines: Vec<Timeline>,
    air: Vec<OnAir>,
    next_tx: u64,
    retention_us: u64,
    keep_history: bool,
    history: Vec<Transmission>,
}

impl Medium {
    /// `retention_us` must be at least the longest airtime in use; ended
    /// transmissions are kept that long to settle overlaps.
    pub fn new(link: LinkMatrix, listeners: Vec<DeviceId>, retention_us: u64) -> Self {
        let n = link.devices();
        Self {
            link,
            listeners,
            timelines: (0..n).map(|_| Timeline::new()).collect(),
            air: Vec::new(),
            next_tx: 0,
            retention_us,
            keep_history: false,
            history: Vec::new(),
        }
    }

    /// Keep full timelines and every transmission for post-run auditing.
    pub fn with_history(mut self) -> Self {
        self.keep_history = true;
        self
    }

    pub fn link(&self) -> &LinkMatrix {
        &self.link
    }

    pub fn listeners(&self) -> &[DeviceId] {
        &self.listeners
    }

    pub fn state(&self, device: DeviceId) -> RadioState {
        self.timelines[device.index()].current()
    }

    pub fn timeline(&self, device: DeviceId) -> &Timeline {
        &self.timelines[device.index()]
    }

    /// Every transmission begun so far (history mode only).
    pub fn history(&self) -> &[Transmission] {
        &self.history
    }

    pub fn set_state(&mut self, device: DeviceId, at: SimTime, state: RadioState) {
        self.timelines[device.index()].set(at, state);
    }

    /// Registers a transmission and marks the sender `Transmitting` until it
    /// ends. Link draws for every listener are taken here from `rng`.
    pub fn begin_transmission(
        &mut self,
        tx_device: DeviceId,
        packet: AdvPacket,
        channel: Channel,
        start: SimTime,
        airtime_us: u64,
        rng: &mut RngStream,
    ) -> Result<Transmission, MediumError> {
        if airtime_us == 0 {
            return Err(MediumError::ZeroAirtime);
        }
        let busy = matches!(self.state(tx_device), RadioState::Transmitting(_))
            || self.air.iter().any(|a| a.tx.tx_device == tx_device && a.tx.end > start);
        if busy {
            return Err(MediumError::OverlappingTransmission { device: tx_device, at: start });
        }
        self.prune(start);
        let tx = Transmission {
            id: TxId(self.next_tx),
            packet,
            channel,
            tx_device,
            start,
            end: start + airtime_us,
        };
        self.next_tx += 1;
        let link = &self.link;
        let arrives = self
            .listeners
            .iter()
            .map(|&rx| rx != tx_device && rng.chance(link.reach(tx_device, rx)))
            .collect();
        self.air.push(OnAir { tx, arrives });
        self.set_state(tx_device, start, RadioState::Transmitting(channel));
        if self.keep_history {
            self.history.push(tx);
        }
        Ok(tx)
    }

    /// Ends a transmission; the sender's radio drops to `Off`.
    pub fn end_transmission(&mut self, id: TxId) -> Result<Transmission, MediumError> {
        let tx = self.find(id)?.tx;
        if self.state(tx.tx_device) == RadioState::Transmitting(tx.channel) {
            self.set_state(tx.tx_device, tx.end, RadioState::Off);
        }
        Ok(tx)
    }

    fn find(&self, id: TxId) -> Result<&OnAir, MediumError> {
        self.air.iter().find(|a| a.tx.id == id).ok_or(MediumError::UnknownTransmission(id))
    }

    /// Decides whether listener `rx` captured transmission `id`.
    ///
    /// When several causes apply the most fundamental wins:
    /// unreachable, asleep, rx-busy, not-tuned, then collision.
    pub fn capture_decision(&self, rx: DeviceId, id: TxId, now: SimTime) -> Result<Capture, MediumError> {
        let on_air = self.find(id)?;
        let tx = on_air.tx;
        if now < tx.end {
            return Err(MediumError::NotEnded(id));
        }
        let Some(slot) = self.listeners.iter().position(|&l| l == rx) else {
            return Ok(Capture::Lost(LossReason::Unreachable));
        };
        if !on_air.arrives[slot] {
            return Ok(Capture::Lost(LossReason::Unreachable));
        }

        let mut asleep = false;
        let mut busy = false;
        let mut detuned = false;
        for state in self.timelines[rx.index()].states_during(tx.start, tx.end) {
            match state {
                RadioState::Asleep => asleep = true,
                RadioState::Busy | RadioState::Transmitting(_) => busy = true,
                RadioState::Listening(ch) if ch == tx.channel => {}
                RadioState::Listening(_) | RadioState::Off => detuned = true,
            }
        }
        if asleep {
            return Ok(Capture::Lost(LossReason::Asleep));
        }
        if busy {
            return Ok(Capture::Lost(LossReason::RxBusy));
        }
        if detuned {
            return Ok(Capture::Lost(LossReason::NotTuned));
        }

        let collided = self.air.iter().any(|other| {
            other.tx.id != tx.id
                && other.tx.channel == tx.channel
                && other.arrives[slot]
                && other.tx.overlaps(tx.start, tx.end)
        });
        if collided {
            return Ok(Capture::Lost(LossReason::Collision));
        }
        Ok(Capture::Received)
    }

    fn prune(&mut self, now: SimTime) {
        let retention = self.retention_us;
        self.air.retain(|a| a.tx.end + retention >= now);
        if !self.keep_history {
            let cutoff = SimTime::from_micros(now.as_micros().saturating_sub(2 * retention));
            for tl in &mut self.timelines {
                tl.prune(cutoff);
            }
        }
    }
}
