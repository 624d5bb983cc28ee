//! Reference scenarios: the office testbed populations used by the
//! acceptance runs and the shipped JSON files under `scenarios/`.

use crate::devices::{
    EchoChannels, EchoCount, ForwardingPolicy, GatewayConfig, NodeConfig, RelayConfig, ResumeMode,
    DEFAULT_GATEWAY_DEAD_TIME_US, DEFAULT_GATEWAY_SCAN_MS, DEFAULT_MODE_SWITCH_LATENCY_US, DEFAULT_SCAN_TIME_MS,
};
use crate::metrics::GatewayCounting;
use crate::power::PowerModel;
use crate::scenario::{Accounting, LinkDefaults, LinkSpec, RadioDefaults, Scenario};

pub const DURATION_S: f64 = 600.0;
pub const MEMBER_PERIOD_MS: u64 = 1_000;
/// Members sit out of gateway range; only the relay path reaches it.
pub const NODE_TO_GATEWAY_REACH: f64 = 0.0;

/// Noise advertiser `i` uses a period of `100 + 65 i` ms.
pub fn noise_period_ms(i: usize) -> u64 {
    100 + 65 * i as u64
}

fn node(id: String, period_ms: u64, radio: &RadioDefaults) -> NodeConfig {
    NodeConfig {
        id,
        period_ms,
        start_offset_us: None,
        airtime_us: radio.airtime_us,
        inter_channel_gap_us: radio.inter_channel_gap_us,
        adv_delay: radio.adv_delay,
    }
}

fn population(members: usize, noise: usize, policy: ForwardingPolicy, scan_interval_ms: u64) -> Scenario {
    let radio = RadioDefaults::default();
    Scenario {
        duration_s: DURATION_S,
        seed: 1,
        radio,
        nodes: (0..members).map(|i| node(format!("node-{i}"), MEMBER_PERIOD_MS, &radio)).collect(),
        noise_nodes: (0..noise).map(|i| node(format!("noise-{i}"), noise_period_ms(i), &radio)).collect(),
        relay: Some(RelayConfig {
            id: "relay".into(),
            scan_interval_ms,
            scan_window_ms: scan_interval_ms,
            scan_time_ms: DEFAULT_SCAN_TIME_MS,
            sleep_time_ms: 0,
            policy,
            mode_switch_latency_us: DEFAULT_MODE_SWITCH_LATENCY_US,
            duplicate_probability: 0.0,
            airtime_us: radio.airtime_us,
            inter_channel_gap_us: radio.inter_channel_gap_us,
        }),
        gateway: GatewayConfig {
            id: "gateway".into(),
            scan_interval_ms: DEFAULT_GATEWAY_SCAN_MS,
            scan_window_ms: DEFAULT_GATEWAY_SCAN_MS,
            processing_dead_time_us: DEFAULT_GATEWAY_DEAD_TIME_US,
        },
        links: LinkSpec {
            defaults: LinkDefaults {
                node_to_relay: 1.0,
                node_to_gateway: NODE_TO_GATEWAY_REACH,
                relay_to_gateway: 1.0,
                noise_to_relay: 1.0,
                noise_to_gateway: 1.0,
            },
            pairs: Vec::new(),
        },
        accounting: Accounting { gateway_counting: GatewayCounting::EchoEvents, ..Accounting::default() },
        power: PowerModel::default(),
    }
}

/// 2 members and 15 noise advertisers; the relay only listens.
pub fn listen_only(scan_interval_ms: u64) -> Scenario {
    let policy = ForwardingPolicy::Batching {
        listen_time_ms: DEFAULT_SCAN_TIME_MS,
        nr_repeats: 0,
        repeat_interval_ms: 10,
        echo_count: EchoCount::Fixed,
        echo_channels: EchoChannels::All,
    };
    population(2, 15, policy, scan_interval_ms)
}

/// 11 members, 6 noise advertisers, echo right after every capture.
pub fn immediate(scan_interval_ms: u64) -> Scenario {
    let policy = ForwardingPolicy::Immediate { resume: ResumeMode::NextDwell, echo_channels: EchoChannels::First };
    population(11, 6, policy, scan_interval_ms)
}

/// 11 members, 6 noise advertisers, 10 s listen then `nr_repeats` echoes per
/// heard member, `repeat_interval_ms` apart. Scan interval 50 ms.
pub fn batching(repeat_interval_ms: u64, nr_repeats: u32) -> Scenario {
    let policy = ForwardingPolicy::Batching {
        listen_time_ms: DEFAULT_SCAN_TIME_MS,
        nr_repeats,
        repeat_interval_ms,
        echo_count: EchoCount::Fixed,
        echo_channels: EchoChannels::All,
    };
    population(11, 6, policy, 50)
}
