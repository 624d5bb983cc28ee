//! Builds a world from a [`Scenario`] and runs it.

use crate::devices::{Ctx, ForwardingPolicy, Gateway, Node, Relay};
use crate::engine::{run_until, DeviceId, Event, EventKind, EventQueue, Model, SimTime, Trace, TxId};
use crate::metrics::{
    listen_ratio, nodes_to_gateway_rate, nodes_to_relay_rate, relay_to_gateway_rate, ConfigEcho,
    PacketLedger, RateReport, RelayIntake,
};
use crate::radio::{Capture, LinkMatrix, Medium, Timeline, Transmission};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record one trace line per dispatched event.
    pub trace: bool,
    /// Keep every transmission, capture and radio timeline for auditing.
    pub history: bool,
}

/// One capture decision, in the order they were taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureRecord {
    pub tx: Transmission,
    pub rx: DeviceId,
    pub at: SimTime,
    pub capture: Capture,
}

#[derive(Debug, Clone)]
pub struct RunHistory {
    pub end: SimTime,
    pub transmissions: Vec<Transmission>,
    pub captures: Vec<CaptureRecord>,
    /// Indexed by device.
    pub timelines: Vec<Timeline>,
    pub member: Vec<bool>,
    pub relay: Option<DeviceId>,
    pub gateway: DeviceId,
    pub immediate: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RateReport,
    pub ledger: PacketLedger,
    pub trace: Trace,
    pub history: Option<RunHistory>,
    pub events_dispatched: u64,
}

enum Slot {
    Node(usize),
    Relay,
    Gateway,
}

struct World {
    nodes: Vec<Node>,
    relay: Option<Relay>,
    gateway: Gateway,
    relay_id: Option<DeviceId>,
    gateway_id: DeviceId,
    medium: Medium,
    ledger: PacketLedger,
    captures: Option<Vec<CaptureRecord>>,
}

impl World {
    fn slot(&self, id: DeviceId) -> Slot {
        if Some(id) == self.relay_id {
            Slot::Relay
        } else if id == self.gateway_id {
            Slot::Gateway
        } else {
            Slot::Node(id.index())
        }
    }

    fn name(&self, id: DeviceId) -> String {
        match self.slot(id) {
            Slot::Node(i) => self.nodes[i].name().to_string(),
            Slot::Relay => self.relay.as_ref().map(|r| r.name().to_string()).unwrap_or_default(),
            Slot::Gateway => self.gateway.name().to_string(),
        }
    }

    fn start(&mut self, queue: &mut EventQueue) {
        let World { nodes, relay, gateway, medium, ledger, .. } = self;
        let mut ctx = Ctx { now: queue.now(), queue, medium, ledger };
        for n in nodes.iter_mut() {
            n.start(&mut ctx);
        }
        if let Some(r) = relay {
            r.start(&mut ctx);
        }
        gateway.start(&mut ctx);
    }

    /// Takes the transmission off the air and settles it at every listener.
    fn finish_tx(&mut self, id: TxId, now: SimTime, queue: &mut EventQueue) -> String {
        let tx = self.medium.end_transmission(id).unwrap_or_else(|e| panic!("hard fault: {e}"));
        self.ledger.record_tx_end(tx.tx_device);
        let mut notes = Vec::new();
        let listeners: Vec<DeviceId> = self.medium.listeners().to_vec();
        for rx in listeners {
            if rx == tx.tx_device {
                continue;
            }
            let capture = self.medium.capture_decision(rx, id, now).unwrap_or_else(|e| panic!("hard fault: {e}"));
            if let Some(log) = &mut self.captures {
                log.push(CaptureRecord { tx, rx, at: now, capture });
            }
            let is_relay = Some(rx) == self.relay_id;
            let World { relay, gateway, medium, ledger, .. } = self;
            match capture {
                Capture::Lost(reason) => {
                    if is_relay {
                        ledger.record_relay_loss(reason);
                    } else {
                        ledger.record_gateway_loss(reason);
                    }
                }
                Capture::Received if is_relay => {
                    let relay = relay.as_mut().expect("relay listener without relay");
                    match ledger.relay_reception(&tx, now) {
                        RelayIntake::Counted => {
                            let mut ctx = Ctx { now, queue: &mut *queue, medium, ledger };
                            let note = relay.on_member_packet(&mut ctx, tx.packet);
                            notes.push(format!("relay:{note}"));
                        }
                        other => notes.push(format!("relay:{}", intake_name(other))),
                    }
                }
                Capture::Received => {
                    let intake = ledger.gateway_reception(&tx, now);
                    let mut ctx = Ctx { now, queue: &mut *queue, medium, ledger };
                    gateway.on_receive(&mut ctx);
                    notes.push(format!("gateway:{}", intake.name()));
                }
            }
        }
        notes.join(" ")
    }
}

fn intake_name(intake: RelayIntake) -> &'static str {
    match intake {
        RelayIntake::Counted => "counted",
        RelayIntake::Duplicate => "duplicate",
        RelayIntake::Filtered => "filtered",
    }
}

impl Model for World {
    fn handle(&mut self, event: Event, queue: &mut EventQueue) -> (String, String) {
        let now = event.fire_at;
        let target = event.target;
        let name = self.name(target);

        let mut detail = String::new();
        if let EventKind::TxEnd(id) = event.kind {
            detail = self.finish_tx(id, now, queue);
        }

        let slot = self.slot(target);
        let World { nodes, relay, gateway, medium, ledger, .. } = self;
        let mut ctx = Ctx { now, queue, medium, ledger };
        let own = match (slot, event.kind) {
            (Slot::Node(i), EventKind::AdvertiseStart) => nodes[i].on_advertise_start(&mut ctx),
            (Slot::Node(i), EventKind::PduStart) => nodes[i].on_pdu_start(&mut ctx),
            (Slot::Node(i), EventKind::TxEnd(_)) => {
                nodes[i].on_tx_end(&mut ctx);
                String::new()
            }
            (Slot::Relay, kind) => {
                let r = relay.as_mut().expect("relay event without relay");
                match kind {
                    EventKind::ChannelHop => r.on_channel_hop(&mut ctx),
                    EventKind::ScanWindowEnd => r.on_scan_window_end(&mut ctx),
                    EventKind::ListenEnd => r.on_listen_end(&mut ctx),
                    EventKind::ForwardSlot => r.on_forward_slot(&mut ctx),
                    EventKind::ForwardDone => r.on_forward_done(&mut ctx),
                    EventKind::SleepEnd => r.on_sleep_end(&mut ctx),
                    EventKind::PduStart => r.on_pdu_start(&mut ctx),
                    EventKind::TxEnd(_) => {
                        r.on_tx_end(&mut ctx);
                        String::new()
                    }
                    other => panic!("hard fault: relay cannot handle {}", other.name()),
                }
            }
            (Slot::Gateway, EventKind::ChannelHop) => gateway.on_channel_hop(&mut ctx),
            (Slot::Gateway, EventKind::ScanWindowEnd) => gateway.on_scan_window_end(&mut ctx),
            (Slot::Gateway, EventKind::GatewayFree) => gateway.on_gateway_free(&mut ctx),
            (_, kind) => panic!("hard fault: device {} cannot handle {}", name, kind.name()),
        };
        if !own.is_empty() {
            if !detail.is_empty() {
                detail.push(' ');
            }
            detail.push_str(&own);
        }
        (name, detail)
    }
}

/// Link matrix from class defaults and explicit pairs.
pub fn build_links(scenario: &Scenario) -> LinkMatrix {
    let names = scenario.device_names();
    let members = scenario.nodes.len();
    let nodes = members + scenario.noise_nodes.len();
    let relay = scenario.relay.as_ref().map(|_| DeviceId(nodes as u32));
    let gateway = DeviceId(names.len() as u32 - 1);
    let d = &scenario.links.defaults;
    let mut link = LinkMatrix::new(names.len());
    let set = |link: &mut LinkMatrix, from: DeviceId, to: DeviceId, p: f64| {
        link.set(from, to, p).expect("links validated");
    };
    for i in 0..nodes {
        let from = DeviceId(i as u32);
        let member = i < members;
        if let Some(r) = relay {
            set(&mut link, from, r, if member { d.node_to_relay } else { d.noise_to_relay });
        }
        set(&mut link, from, gateway, if member { d.node_to_gateway } else { d.noise_to_gateway });
    }
    if let Some(r) = relay {
        set(&mut link, r, gateway, d.relay_to_gateway);
    }
    for pair in &scenario.links.pairs {
        let index = |n: &str| names.iter().position(|x| *x == n).expect("links validated") as u32;
        set(&mut link, DeviceId(index(&pair.from)), DeviceId(index(&pair.to)), pair.reach);
    }
    link
}

fn config_echo(scenario: &Scenario) -> ConfigEcho {
    let relay = scenario.relay.as_ref();
    let (repeat_interval_ms, nr_repeats) = match relay.map(|r| &r.policy) {
        Some(ForwardingPolicy::Batching { repeat_interval_ms, nr_repeats, .. }) => {
            (Some(*repeat_interval_ms), Some(*nr_repeats))
        }
        _ => (None, None),
    };
    let period = scenario.nodes.first().map(|n| n.period_ms);
    let shared_period = period.filter(|p| scenario.nodes.iter().all(|n| n.period_ms == *p));
    ConfigEcho {
        policy: relay.map_or("none", |r| r.policy.name()).to_string(),
        member_nodes: scenario.nodes.len(),
        noise_nodes: scenario.noise_nodes.len(),
        scan_interval_ms: relay.map(|r| r.scan_interval_ms),
        repeat_interval_ms,
        nr_repeats,
        sleep_time_ms: relay.map(|r| r.sleep_time_ms),
        node_period_ms: shared_period,
    }
}

/// Listen share of the relay's active time for the configured population.
pub fn scenario_listen_ratio(scenario: &Scenario) -> Option<f64> {
    let relay = scenario.relay.as_ref()?;
    match relay.policy {
        ForwardingPolicy::Batching { listen_time_ms, nr_repeats, repeat_interval_ms, .. } => listen_ratio(
            listen_time_ms as f64,
            repeat_interval_ms as f64,
            f64::from(nr_repeats),
            scenario.nodes.len() as f64,
        )
        .ok(),
        ForwardingPolicy::Immediate { .. } => Some(1.0),
    }
}

/// Runs one scenario to completion.
pub fn run_scenario(scenario: &Scenario, options: RunOptions) -> RunOutcome {
    let names = scenario.device_names();
    let members = scenario.nodes.len();
    let nodes_total = members + scenario.noise_nodes.len();
    let relay_id = scenario.relay.as_ref().map(|_| DeviceId(nodes_total as u32));
    let gateway_id = DeviceId(names.len() as u32 - 1);

    let mut member = vec![false; names.len()];
    member[..members].iter_mut().for_each(|m| *m = true);

    let max_airtime = scenario
        .nodes
        .iter()
        .chain(&scenario.noise_nodes)
        .map(|n| n.airtime_us)
        .chain(scenario.relay.as_ref().map(|r| r.airtime_us))
        .max()
        .unwrap_or(1);
    let listeners: Vec<DeviceId> = relay_id.into_iter().chain([gateway_id]).collect();
    let mut medium = Medium::new(build_links(scenario), listeners, 2 * max_airtime);
    if options.history {
        medium = medium.with_history();
    }

    let seed = scenario.seed;
    let nodes: Vec<Node> = scenario
        .nodes
        .iter()
        .chain(&scenario.noise_nodes)
        .enumerate()
        .map(|(i, cfg)| Node::new(DeviceId(i as u32), cfg.clone(), i < members, seed))
        .collect();
    let relay = scenario
        .relay
        .as_ref()
        .zip(relay_id)
        .map(|(cfg, id)| Relay::new(id, cfg.clone(), seed));

    let mut world = World {
        nodes,
        relay,
        gateway: Gateway::new(gateway_id, scenario.gateway.clone(), seed),
        relay_id,
        gateway_id,
        medium,
        ledger: PacketLedger::new(member.clone(), scenario.accounting.dedup_horizon_us),
        captures: options.history.then(Vec::new),
    };

    let mut queue = EventQueue::new();
    let mut trace = if options.trace { Trace::enabled() } else { Trace::disabled() };
    world.start(&mut queue);
    let end = SimTime::from_secs_f64(scenario.duration_s);
    let events_dispatched = run_until(&mut world, &mut queue, end, &mut trace);

    let ledger = world.ledger;
    let measured_duty = world.relay.as_ref().map(|r| {
        let total = end.as_micros().max(1) as f64;
        1.0 - r.asleep_us(end) as f64 / total
    });
    let report = RateReport {
        seed,
        duration_s: scenario.duration_s,
        nodes_to_relay: scenario.relay.as_ref().and_then(|_| nodes_to_relay_rate(&ledger)),
        relay_to_gateway: relay_to_gateway_rate(&ledger),
        nodes_to_gateway: nodes_to_gateway_rate(&ledger, scenario.accounting.gateway_counting),
        listen_ratio: scenario_listen_ratio(scenario),
        duty_cycle: scenario.relay.as_ref().map(|r| r.nominal_duty(members)),
        measured_duty,
        member_events_sent: ledger.member_events_sent(),
        echo_events_sent: ledger.echo_events_sent,
        relay: ledger.relay.clone(),
        gateway: ledger.gateway.clone(),
        config: config_echo(scenario),
    };

    let history = options.history.then(|| RunHistory {
        end,
        transmissions: world.medium.history().to_vec(),
        captures: world.captures.take().unwrap_or_default(),
        timelines: (0..names.len()).map(|i| world.medium.timeline(DeviceId(i as u32)).clone()).collect(),
        member,
        relay: relay_id,
        gateway: gateway_id,
        immediate: matches!(scenario.relay.as_ref().map(|r| &r.policy), Some(ForwardingPolicy::Immediate { .. })),
    });

    RunOutcome { report, ledger, trace, history, events_dispatched }
}
