//! State machines for the advertising nodes, the duty-cycled relay and the
//! scanning gateway, plus their resolved configuration.

mod gateway;
mod node;
mod relay;

pub use gateway::Gateway;
pub use node::{Node, ADV_DELAY_MAX_US};
pub use relay::{BatchPlan, Relay, RelayPhase};

use serde::{Deserialize, Serialize};

use crate::engine::{DeviceId, EventKind, EventQueue, RngStream, SimTime};
use crate::metrics::PacketLedger;
use crate::radio::{AdvPacket, Channel, Medium, Transmission};

pub const DEFAULT_AIRTIME_US: u64 = 300;
pub const DEFAULT_INTER_CHANNEL_GAP_US: u64 = 400;
pub const DEFAULT_MODE_SWITCH_LATENCY_US: u64 = 150;
pub const DEFAULT_SCAN_TIME_MS: u64 = 10_000;
pub const DEFAULT_GATEWAY_SCAN_MS: u64 = 50;
pub const DEFAULT_GATEWAY_DEAD_TIME_US: u64 = 1_000;

/// One advertiser, network member or noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeConfig {
    pub id: String,
    pub period_ms: u64,
    /// First advertising event; drawn uniformly from one period when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_offset_us: Option<u64>,
    pub airtime_us: u64,
    pub inter_channel_gap_us: u64,
    /// Random 0-10 ms advertising delay added to every period.
    pub adv_delay: bool,
}

impl NodeConfig {
    /// Duration of one three-channel advertising event.
    pub fn event_span_us(&self) -> u64 {
        event_span_us(3, self.airtime_us, self.inter_channel_gap_us)
    }
}

pub fn event_span_us(pdus: u64, airtime_us: u64, gap_us: u64) -> u64 {
    pdus * airtime_us + pdus.saturating_sub(1) * gap_us
}

/// What the relay does after an immediate echo.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResumeMode {
    /// Stay deaf until the next dwell starts: one relayed packet per scan interval.
    #[default]
    NextDwell,
    /// Go back to listening in the interrupted dwell.
    SameDwell,
}

/// Channels used by one echo event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EchoChannels {
    /// A single PDU on channel 37, where every advertising event starts.
    First,
    /// A single PDU on the channel the relay was dwelling on.
    Dwell,
    /// A full 37/38/39 advertising event.
    All,
}

/// Number of echoes per origin heard during a batching listen phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EchoCount {
    /// Exactly `nr_repeats` for every origin heard at least once.
    #[default]
    Fixed,
    /// `min(count, nr_repeats)`.
    Capped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ForwardingPolicy {
    Immediate {
        resume: ResumeMode,
        echo_channels: EchoChannels,
    },
    Batching {
        listen_time_ms: u64,
        nr_repeats: u32,
        repeat_interval_ms: u64,
        echo_count: EchoCount,
        echo_channels: EchoChannels,
    },
}

impl ForwardingPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ForwardingPolicy::Immediate { .. } => "immediate",
            ForwardingPolicy::Batching { .. } => "batching",
        }
    }

    pub fn echo_channels(&self) -> EchoChannels {
        match self {
            ForwardingPolicy::Immediate { echo_channels, .. }
            | ForwardingPolicy::Batching { echo_channels, .. } => *echo_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayConfig {
    pub id: String,
    pub scan_interval_ms: u64,
    pub scan_window_ms: u64,
    /// Listen phase length under the immediate policy.
    pub scan_time_ms: u64,
    pub sleep_time_ms: u64,
    pub policy: ForwardingPolicy,
    pub mode_switch_latency_us: u64,
    pub duplicate_probability: f64,
    pub airtime_us: u64,
    pub inter_channel_gap_us: u64,
}

impl RelayConfig {
    /// Length of one listen phase.
    pub fn listen_time_ms(&self) -> u64 {
        match self.policy {
            ForwardingPolicy::Batching { listen_time_ms, .. } => listen_time_ms,
            ForwardingPolicy::Immediate { .. } => self.scan_time_ms,
        }
    }

    pub fn echo_span_us(&self) -> u64 {
        let pdus = match self.policy.echo_channels() {
            EchoChannels::First | EchoChannels::Dwell => 1,
            EchoChannels::All => 3,
        };
        event_span_us(pdus, self.airtime_us, self.inter_channel_gap_us)
    }

    /// Nominal active time per cycle, with every one of `members` heard when batching.
    pub fn nominal_active_us(&self, members: usize) -> u64 {
        let listen = self.listen_time_ms() * 1_000;
        match self.policy {
            ForwardingPolicy::Batching { nr_repeats, repeat_interval_ms, .. } if nr_repeats > 0 && members > 0 => {
                listen
                    + self.mode_switch_latency_us
                    + u64::from(nr_repeats) * repeat_interval_ms * 1_000 * members as u64
            }
            _ => listen,
        }
    }

    /// Configured active share of a cycle.
    pub fn nominal_duty(&self, members: usize) -> f64 {
        let active = self.nominal_active_us(members) as f64;
        active / (active + (self.sleep_time_ms * 1_000) as f64)
    }

    /// Sleep time giving `duty` for the nominal active time, in ms.
    pub fn sleep_for_duty(&self, duty: f64, members: usize) -> u64 {
        let active_ms = self.nominal_active_us(members) as f64 / 1_000.0;
        (active_ms * (1.0 - duty) / duty).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatewayConfig {
    pub id: String,
    pub scan_interval_ms: u64,
    pub scan_window_ms: u64,
    pub processing_dead_time_us: u64,
}

/// Shared simulation services handed to a device while it handles an event.
pub struct Ctx<'a> {
    pub now: SimTime,
    pub queue: &'a mut EventQueue,
    pub medium: &'a mut Medium,
    pub ledger: &'a mut PacketLedger,
}

impl Ctx<'_> {
    /// Panics when `at` lies in the past: that is a simulator bug, not a
    /// recoverable condition.
    pub fn schedule(&mut self, at: SimTime, target: DeviceId, kind: EventKind) {
        if let Err(e) = self.queue.schedule(at, target, kind) {
            panic!("hard fault: {e}");
        }
    }

    /// Puts a PDU on air now and schedules its end.
    pub fn transmit(
        &mut self,
        device: DeviceId,
        packet: AdvPacket,
        channel: Channel,
        airtime_us: u64,
        link_rng: &mut RngStream,
    ) -> Transmission {
        let tx = self
            .medium
            .begin_transmission(device, packet, channel, self.now, airtime_us, link_rng)
            .unwrap_or_else(|e| panic!("hard fault: {e}"));
        self.ledger.record_tx_begin(device);
        self.schedule(tx.end, device, EventKind::TxEnd(tx.id));
        tx
    }
}

fn pdu_detail(tx: &Transmission) -> String {
    let p = tx.packet;
    match p.echo_seq {
        Some(e) => format!("ch={} origin={} seq={} echo={}", tx.channel, p.origin.0, p.origin_seq, e),
        None => format!("ch={} origin={} seq={}", tx.channel, p.origin.0, p.origin_seq),
    }
}
