//! Packet ledger and per-hop reception rates.
//!
//! Every capture decision taken at the relay or gateway lands in exactly one
//! bucket: counted, duplicate, filtered (non-member origin) or one of the loss
//! reasons. Rates are computed from the ledger after the run.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{DeviceId, SimTime};
use crate::radio::{AdvPacket, LossReason, Transmission};

/// Default window within which repeated receptions of one packet are one event.
pub const DEFAULT_DEDUP_HORIZON_US: u64 = 20_000;

#[derive(Debug, Error, PartialEq)]
pub enum ArgumentError {
    #[error("scan time must be positive, got {0}")]
    NonPositiveScanTime(f64),
    #[error("{name} must be finite and non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
}

/// Share of a listen-and-forward cycle spent listening:
/// `scan_time / (scan_time + repeat_interval * repeats * nodes)`.
pub fn listen_ratio(scan_time: f64, repeat_interval: f64, repeats: f64, nodes: f64) -> Result<f64, ArgumentError> {
    for (name, value) in [
        ("repeat interval", repeat_interval),
        ("repeat count", repeats),
        ("node count", nodes),
    ] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(ArgumentError::Negative { name, value });
        }
    }
    if !(scan_time.is_finite() && scan_time > 0.0) {
        return Err(ArgumentError::NonPositiveScanTime(scan_time));
    }
    Ok(scan_time / (scan_time + repeat_interval * repeats * nodes))
}

/// Identity of one advertising event as seen by a receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKey {
    Original { origin: DeviceId, origin_seq: u64 },
    Echo { relay: DeviceId, echo_seq: u64 },
}

impl PacketKey {
    pub fn of(tx: &Transmission) -> Self {
        match tx.packet.echo_seq {
            Some(echo_seq) => PacketKey::Echo { relay: tx.tx_device, echo_seq },
            None => PacketKey::Original { origin: tx.packet.origin, origin_seq: tx.packet.origin_seq },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dedup {
    Counted,
    Duplicate,
}

/// Collapses the receptions of one advertising event into a single count.
#[derive(Debug, Clone)]
pub struct DedupTable {
    horizon_us: u64,
    first_seen: HashMap<PacketKey, SimTime>,
}

impl DedupTable {
    pub fn new(horizon_us: u64) -> Self {
        Self { horizon_us, first_seen: HashMap::new() }
    }

    /// A key seen again within the horizon of its first sighting is a duplicate.
    pub fn dedup_event(&mut self, key: PacketKey, at: SimTime) -> Dedup {
        if let Some(&first) = self.first_seen.get(&key) {
            if at.since(first) <= self.horizon_us {
                return Dedup::Duplicate;
            }
        }
        if self.first_seen.len() >= 4096 {
            let horizon = self.horizon_us;
            self.first_seen.retain(|_, t| at.since(*t) <= horizon);
        }
        self.first_seen.insert(key, at);
        Dedup::Counted
    }
}

/// Outcome buckets for one receiving device.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReceiverTally {
    pub attempts: u64,
    pub counted: u64,
    pub duplicates: u64,
    pub filtered: u64,
    pub lost: LossBreakdown,
}

impl ReceiverTally {
    pub fn accounted(&self) -> u64 {
        self.counted + self.duplicates + self.filtered + self.lost.total()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LossBreakdown {
    pub not_tuned: u64,
    pub collision: u64,
    pub unreachable: u64,
    pub rx_busy: u64,
    pub asleep: u64,
}

impl LossBreakdown {
    pub fn add(&mut self, reason: LossReason) {
        *self.slot(reason) += 1;
    }

    pub fn get(&self, reason: LossReason) -> u64 {
        match reason {
            LossReason::NotTuned => self.not_tuned,
            LossReason::Collision => self.collision,
            LossReason::Unreachable => self.unreachable,
            LossReason::RxBusy => self.rx_busy,
            LossReason::Asleep => self.asleep,
        }
    }

    fn slot(&mut self, reason: LossReason) -> &mut u64 {
        match reason {
            LossReason::NotTuned => &mut self.not_tuned,
            LossReason::Collision => &mut self.collision,
            LossReason::Unreachable => &mut self.unreachable,
            LossReason::RxBusy => &mut self.rx_busy,
            LossReason::Asleep => &mut self.asleep,
        }
    }

    pub fn total(&self) -> u64 {
        LossReason::ALL.iter().map(|r| self.get(*r)).sum()
    }
}

/// How the gateway's received count is formed for `nodes_to_gateway`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayCounting {
    /// Distinct echo events plus distinct direct member events.
    #[default]
    EchoEvents,
    /// Distinct `(origin, origin_seq)` pairs, however they arrived.
    UniqueOrigin,
    /// Every member-origin reception, no deduplication.
    Raw,
}

/// What the relay did with a captured packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayIntake {
    Counted,
    Duplicate,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayIntake {
    Echo,
    Direct,
    Duplicate,
    Filtered,
}

impl GatewayIntake {
    pub fn name(self) -> &'static str {
        match self {
            GatewayIntake::Echo => "relay-echo",
            GatewayIntake::Direct => "direct-from-node",
            GatewayIntake::Duplicate => "duplicate",
            GatewayIntake::Filtered => "noise-filtered",
        }
    }
}

/// Every transmit and receive count of one run.
#[derive(Debug, Clone)]
pub struct PacketLedger {
    member: Vec<bool>,
    /// Advertising events started, by origin device.
    pub sent_events: Vec<u64>,
    /// PDUs put on air, by device.
    pub transmissions: Vec<u64>,
    /// PDUs that left the air, by device.
    pub transmissions_ended: Vec<u64>,
    pub relay: ReceiverTally,
    pub gateway: ReceiverTally,
    /// Relay-counted events, by origin.
    pub relay_counted: Vec<u64>,
    /// Distinct echo events (distinct `echo_seq`) sent by the relay.
    pub echo_events_sent: u64,
    /// Extra identical copies of echo events.
    pub echo_repeats_sent: u64,
    pub gateway_echo_events: u64,
    pub gateway_direct_events: u64,
    pub gateway_raw_member: u64,
    gateway_unique: HashSet<(DeviceId, u64)>,
    relay_dedup: DedupTable,
    gateway_dedup: DedupTable,
}

impl PacketLedger {
    /// `member[i]` tells whether device `i` belongs to the network.
    pub fn new(member: Vec<bool>, dedup_horizon_us: u64) -> Self {
        let n = member.len();
        Self {
            member,
            sent_events: vec![0; n],
            transmissions: vec![0; n],
            transmissions_ended: vec![0; n],
            relay: ReceiverTally::default(),
            gateway: ReceiverTally::default(),
            relay_counted: vec![0; n],
            echo_events_sent: 0,
            echo_repeats_sent: 0,
            gateway_echo_events: 0,
            gateway_direct_events: 0,
            gateway_raw_member: 0,
            gateway_unique: HashSet::new(),
            relay_dedup: DedupTable::new(dedup_horizon_us),
            gateway_dedup: DedupTable::new(dedup_horizon_us),
        }
    }

    pub fn is_member(&self, device: DeviceId) -> bool {
        self.member.get(device.index()).copied().unwrap_or(false)
    }

    pub fn record_sent_event(&mut self, origin: DeviceId) {
        self.sent_events[origin.index()] += 1;
    }

    pub fn record_tx_begin(&mut self, device: DeviceId) {
        self.transmissions[device.index()] += 1;
    }

    pub fn record_tx_end(&mut self, device: DeviceId) {
        self.transmissions_ended[device.index()] += 1;
    }

    pub fn record_echo_sent(&mut self, identical_repeats: u64) {
        self.echo_events_sent += 1;
        self.echo_repeats_sent += identical_repeats;
    }

    pub fn record_relay_loss(&mut self, reason: LossReason) {
        self.relay.attempts += 1;
        self.relay.lost.add(reason);
    }

    pub fn record_gateway_loss(&mut self, reason: LossReason) {
        self.gateway.attempts += 1;
        self.gateway.lost.add(reason);
    }

    /// Books a packet captured by the relay. Non-members are filtered before
    /// deduplication.
    pub fn relay_reception(&mut self, tx: &Transmission, at: SimTime) -> RelayIntake {
        self.relay.attempts += 1;
        if !self.is_member(tx.packet.origin) {
            self.relay.filtered += 1;
            return RelayIntake::Filtered;
        }
        match self.relay_dedup.dedup_event(PacketKey::of(tx), at) {
            Dedup::Counted => {
                self.relay.counted += 1;
                self.relay_counted[tx.packet.origin.index()] += 1;
                RelayIntake::Counted
            }
            Dedup::Duplicate => {
                self.relay.duplicates += 1;
                RelayIntake::Duplicate
            }
        }
    }

    /// Books a packet captured by the gateway and classifies its source.
    pub fn gateway_reception(&mut self, tx: &Transmission, at: SimTime) -> GatewayIntake {
        self.gateway.attempts += 1;
        let AdvPacket { origin, origin_seq, .. } = tx.packet;
        if !self.is_member(origin) {
            self.gateway.filtered += 1;
            return GatewayIntake::Filtered;
        }
        self.gateway_raw_member += 1;
        self.gateway_unique.insert((origin, origin_seq));
        match self.gateway_dedup.dedup_event(PacketKey::of(tx), at) {
            Dedup::Duplicate => {
                self.gateway.duplicates += 1;
                GatewayIntake::Duplicate
            }
            Dedup::Counted => {
                self.gateway.counted += 1;
                if tx.packet.is_echo() {
                    self.gateway_echo_events += 1;
                    GatewayIntake::Echo
                } else {
                    self.gateway_direct_events += 1;
                    GatewayIntake::Direct
                }
            }
        }
    }

    pub fn member_events_sent(&self) -> u64 {
        self.sent_events.iter().zip(&self.member).filter(|(_, m)| **m).map(|(s, _)| s).sum()
    }

    pub fn gateway_unique_origins(&self) -> u64 {
        self.gateway_unique.len() as u64
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Member events counted at the relay over member events sent.
pub fn nodes_to_relay_rate(ledger: &PacketLedger) -> Option<f64> {
    ratio(ledger.relay.counted, ledger.member_events_sent())
}

/// Echo events received at the gateway over echo events transmitted.
pub fn relay_to_gateway_rate(ledger: &PacketLedger) -> Option<f64> {
    ratio(ledger.gateway_echo_events, ledger.echo_events_sent)
}

/// Member traffic reaching the gateway, by either path, over member events sent.
pub fn nodes_to_gateway_rate(ledger: &PacketLedger, counting: GatewayCounting) -> Option<f64> {
    let received = match counting {
        GatewayCounting::EchoEvents => ledger.gateway_echo_events + ledger.gateway_direct_events,
        GatewayCounting::UniqueOrigin => ledger.gateway_unique_origins(),
        GatewayCounting::Raw => ledger.gateway_raw_member,
    };
    ratio(received, ledger.member_events_sent())
}

/// Parameters of the run echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub policy: String,
    pub member_nodes: usize,
    pub noise_nodes: usize,
    pub scan_interval_ms: Option<u64>,
    pub repeat_interval_ms: Option<u64>,
    pub nr_repeats: Option<u32>,
    pub sleep_time_ms: Option<u64>,
    /// Period of the member nodes when they all share one.
    pub node_period_ms: Option<u64>,
}

/// Finalized per-run metrics. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub seed: u64,
    pub duration_s: f64,
    pub nodes_to_relay: Option<f64>,
    pub relay_to_gateway: Option<f64>,
    pub nodes_to_gateway: Option<f64>,
    /// Listen share of the active cycle; absent without a relay.
    pub listen_ratio: Option<f64>,
    /// Configured active share of the relay cycle; absent without a relay.
    pub duty_cycle: Option<f64>,
    /// Share of the run the relay was not asleep.
    pub measured_duty: Option<f64>,
    pub member_events_sent: u64,
    pub echo_events_sent: u64,
    pub relay: ReceiverTally,
    pub gateway: ReceiverTally,
    pub config: ConfigEcho,
}
