//! Duty-cycled relay.
//!
//! A cycle is a listen phase (channel dwells of `scan_interval`, listening for
//! `scan_window` at the start of each), an optional forwarding phase
//! (batching only), then `sleep_time` with the radio off. Channels continue
//! 37 -> 38 -> 39 across cycles.
//!
//! Under the immediate policy every counted member packet interrupts the
//! dwell: after the mode switch latency the relay sends one echo and then,
//! by default, stays deaf until the next dwell begins. Under batching the
//! relay only counts packets per origin while listening and emits the echoes
//! once the listen phase is over.

use std::collections::{BTreeMap, VecDeque};

use crate::engine::{DeviceId, EventKind, RngStream, SimTime};
use crate::radio::{AdvPacket, Channel, RadioState};

use super::{pdu_detail, Ctx, EchoChannels, EchoCount, ForwardingPolicy, RelayConfig, ResumeMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayPhase {
    Listening,
    Forwarding,
    Sleeping,
}

#[derive(Debug, Clone, Copy)]
enum AfterEcho {
    ListenEnd,
    ForwardDone,
}

#[derive(Debug, Clone)]
struct EchoJob {
    packet: AdvPacket,
    channels: Vec<Channel>,
    next_pdu: usize,
    /// Identical copies still to send, including the current one.
    copies_left: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Heard {
    count: u32,
    last_seq: u64,
}

/// Echoes emitted at the end of a batching listen phase, in send order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPlan {
    /// `(latest packet heard, echoes)` per origin, ascending origin id.
    pub per_origin: Vec<(AdvPacket, u32)>,
}

impl BatchPlan {
    /// Builds the plan from per-origin reception counts. Origins with a zero
    /// count produce nothing.
    pub fn from_counts(
        counts: impl IntoIterator<Item = (AdvPacket, u32)>,
        nr_repeats: u32,
        mode: EchoCount,
    ) -> Self {
        let mut per_origin: Vec<(AdvPacket, u32)> = counts
            .into_iter()
            .filter(|(_, c)| *c > 0)
            .map(|(p, c)| {
                let n = match mode {
                    EchoCount::Fixed => nr_repeats,
                    EchoCount::Capped => c.min(nr_repeats),
                };
                (p, n)
            })
            .filter(|(_, n)| *n > 0)
            .collect();
        per_origin.sort_by_key(|(p, _)| p.origin);
        Self { per_origin }
    }

    pub fn echoes_for(&self, origin: DeviceId) -> u32 {
        self.per_origin.iter().find(|(p, _)| p.origin == origin).map_or(0, |(_, n)| *n)
    }

    pub fn total(&self) -> u32 {
        self.per_origin.iter().map(|(_, n)| n).sum()
    }

    /// Consecutive echoes per origin.
    pub fn packets(&self) -> impl Iterator<Item = AdvPacket> + '_ {
        self.per_origin.iter().flat_map(|(p, n)| std::iter::repeat_n(*p, *n as usize))
    }
}

#[derive(Debug, Clone)]
pub struct Relay {
    id: DeviceId,
    cfg: RelayConfig,
    rng: RngStream,
    link_rng: RngStream,
    phase: RelayPhase,
    phase_end: SimTime,
    channel: Channel,
    next_channel: Channel,
    window_open: bool,
    deaf: bool,
    echo: Option<EchoJob>,
    after_echo: Option<AfterEcho>,
    heard: BTreeMap<DeviceId, Heard>,
    forward_queue: VecDeque<AdvPacket>,
    echo_seq: u64,
    sleep_since: Option<SimTime>,
    asleep_us: u64,
}

impl Relay {
    pub fn new(id: DeviceId, cfg: RelayConfig, seed: u64) -> Self {
        let rng = RngStream::for_device(seed, &cfg.id, "relay");
        let link_rng = RngStream::for_device(seed, &cfg.id, "link");
        Self {
            id,
            cfg,
            rng,
            link_rng,
            phase: RelayPhase::Sleeping,
            phase_end: SimTime::ZERO,
            channel: Channel::Ch37,
            next_channel: Channel::Ch37,
            window_open: false,
            deaf: false,
            echo: None,
            after_echo: None,
            heard: BTreeMap::new(),
            forward_queue: VecDeque::new(),
            echo_seq: 0,
            sleep_since: None,
            asleep_us: 0,
        }
    }

    pub fn id(&self) -> DeviceId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.cfg.id
    }

    pub fn config(&self) -> &RelayConfig {
        &self.cfg
    }

    pub fn phase(&self) -> RelayPhase {
        self.phase
    }

    /// Total time spent asleep up to `now`.
    pub fn asleep_us(&self, now: SimTime) -> u64 {
        self.asleep_us + self.sleep_since.map_or(0, |s| now.since(s))
    }

    pub fn start(&mut self, ctx: &mut Ctx) {
        self.start_cycle(ctx);
    }

    fn start_cycle(&mut self, ctx: &mut Ctx) {
        self.phase = RelayPhase::Listening;
        self.phase_end = ctx.now + self.cfg.listen_time_ms() * 1_000;
        ctx.schedule(self.phase_end, self.id, EventKind::ListenEnd);
        self.start_dwell(ctx);
    }

    fn start_dwell(&mut self, ctx: &mut Ctx) {
        let interval = self.cfg.scan_interval_ms * 1_000;
        let window = self.cfg.scan_window_ms * 1_000;
        self.channel = self.next_channel;
        self.next_channel = self.channel.next();
        self.window_open = window > 0;
        self.deaf = false;
        if window < interval && ctx.now + window < self.phase_end {
            ctx.schedule(ctx.now + window, self.id, EventKind::ScanWindowEnd);
        }
        if ctx.now + interval < self.phase_end {
            ctx.schedule(ctx.now + interval, self.id, EventKind::ChannelHop);
        }
        self.settle(ctx);
    }

    /// Brings the radio in line with the phase unless an echo owns it.
    fn settle(&mut self, ctx: &mut Ctx) {
        if self.echo.is_some() {
            return;
        }
        let state = match self.phase {
            RelayPhase::Listening if self.window_open && !self.deaf => RadioState::Listening(self.channel),
            RelayPhase::Listening | RelayPhase::Forwarding => RadioState::Off,
            RelayPhase::Sleeping => RadioState::Asleep,
        };
        ctx.medium.set_state(self.id, ctx.now, state);
    }

    pub fn on_channel_hop(&mut self, ctx: &mut Ctx) -> String {
        self.start_dwell(ctx);
        format!("ch={}", self.channel)
    }

    pub fn on_scan_window_end(&mut self, ctx: &mut Ctx) -> String {
        self.window_open = false;
        self.settle(ctx);
        format!("ch={}", self.channel)
    }

    pub fn on_listen_end(&mut self, ctx: &mut Ctx) -> String {
        if self.echo.is_some() {
            self.after_echo = Some(AfterEcho::ListenEnd);
            return "deferred".into();
        }
        self.end_listen(ctx)
    }

    fn end_listen(&mut self, ctx: &mut Ctx) -> String {
        self.window_open = false;
        match self.cfg.policy {
            ForwardingPolicy::Immediate { .. } => {
                self.after_active(ctx);
                "immediate".into()
            }
            ForwardingPolicy::Batching { nr_repeats, echo_count, .. } => {
                let heard = std::mem::take(&mut self.heard);
                let plan = BatchPlan::from_counts(
                    heard.into_iter().map(|(origin, h)| (AdvPacket::original(origin, h.last_seq), h.count)),
                    nr_repeats,
                    echo_count,
                );
                let detail = format!("origins={} echoes={}", plan.per_origin.len(), plan.total());
                self.forward_queue = plan.packets().collect();
                if self.forward_queue.is_empty() {
                    self.after_active(ctx);
                } else {
                    self.phase = RelayPhase::Forwarding;
                    self.settle(ctx);
                    ctx.schedule(ctx.now + self.cfg.mode_switch_latency_us, self.id, EventKind::ForwardSlot);
                }
                detail
            }
        }
    }

    pub fn on_forward_slot(&mut self, ctx: &mut Ctx) -> String {
        let ForwardingPolicy::Batching { repeat_interval_ms, .. } = self.cfg.policy else {
            unreachable!("forward slot under immediate policy");
        };
        let packet = self.forward_queue.pop_front().expect("forward slot without queued echo");
        let next = ctx.now + repeat_interval_ms * 1_000;
        if self.forward_queue.is_empty() {
            ctx.schedule(next, self.id, EventKind::ForwardDone);
        } else {
            ctx.schedule(next, self.id, EventKind::ForwardSlot);
        }
        self.begin_echo(ctx, packet, 1);
        self.send_echo_pdu(ctx)
    }

    pub fn on_forward_done(&mut self, ctx: &mut Ctx) -> String {
        if self.echo.is_some() {
            self.after_echo = Some(AfterEcho::ForwardDone);
            return "deferred".into();
        }
        self.after_active(ctx);
        String::new()
    }

    fn after_active(&mut self, ctx: &mut Ctx) {
        if self.cfg.sleep_time_ms > 0 {
            self.phase = RelayPhase::Sleeping;
            self.sleep_since = Some(ctx.now);
            self.settle(ctx);
            ctx.schedule(ctx.now + self.cfg.sleep_time_ms * 1_000, self.id, EventKind::SleepEnd);
        } else {
            self.start_cycle(ctx);
        }
    }

    pub fn on_sleep_end(&mut self, ctx: &mut Ctx) -> String {
        if let Some(since) = self.sleep_since.take() {
            self.asleep_us += ctx.now.since(since);
        }
        self.start_cycle(ctx);
        format!("ch={}", self.channel)
    }

    /// A counted member packet was captured. Returns a trace note.
    pub fn on_member_packet(&mut self, ctx: &mut Ctx, packet: AdvPacket) -> String {
        match self.cfg.policy {
            ForwardingPolicy::Immediate { resume, .. } => {
                if self.phase != RelayPhase::Listening || self.echo.is_some() {
                    return "ignored".into();
                }
                self.deaf = resume == ResumeMode::NextDwell;
                let copies = 1 + u32::from(self.rng.chance(self.cfg.duplicate_probability));
                self.begin_echo(ctx, packet, copies);
                ctx.medium.set_state(self.id, ctx.now, RadioState::Off);
                ctx.schedule(ctx.now + self.cfg.mode_switch_latency_us, self.id, EventKind::PduStart);
                format!("echo={} copies={}", self.echo_seq - 1, copies)
            }
            ForwardingPolicy::Batching { .. } => {
                let h = self.heard.entry(packet.origin).or_insert(Heard { count: 0, last_seq: 0 });
                h.count = h.count.saturating_add(1);
                h.last_seq = packet.origin_seq;
                format!("buffered count={}", h.count)
            }
        }
    }

    fn begin_echo(&mut self, ctx: &mut Ctx, packet: AdvPacket, copies: u32) {
        let channels = match self.cfg.policy.echo_channels() {
            EchoChannels::First => vec![Channel::Ch37],
            EchoChannels::Dwell => vec![self.channel],
            EchoChannels::All => Channel::ALL.to_vec(),
        };
        self.echo = Some(EchoJob {
            packet: AdvPacket::original(packet.origin, packet.origin_seq).echo_of(self.echo_seq),
            channels,
            next_pdu: 0,
            copies_left: copies,
        });
        self.echo_seq += 1;
        ctx.ledger.record_echo_sent(u64::from(copies - 1));
    }

    pub fn on_pdu_start(&mut self, ctx: &mut Ctx) -> String {
        self.send_echo_pdu(ctx)
    }

    fn send_echo_pdu(&mut self, ctx: &mut Ctx) -> String {
        let job = self.echo.as_ref().expect("echo PDU without a job");
        let (packet, channel) = (job.packet, job.channels[job.next_pdu]);
        let tx = ctx.transmit(self.id, packet, channel, self.cfg.airtime_us, &mut self.link_rng);
        pdu_detail(&tx)
    }

    pub fn on_tx_end(&mut self, ctx: &mut Ctx) {
        let gap = self.cfg.inter_channel_gap_us;
        let job = self.echo.as_mut().expect("relay transmission without a job");
        job.next_pdu += 1;
        if job.next_pdu < job.channels.len() {
            ctx.schedule(ctx.now + gap, self.id, EventKind::PduStart);
            return;
        }
        if job.copies_left > 1 {
            job.copies_left -= 1;
            job.next_pdu = 0;
            ctx.schedule(ctx.now + gap, self.id, EventKind::PduStart);
            return;
        }
        self.echo = None;
        match self.after_echo.take() {
            Some(AfterEcho::ListenEnd) => {
                self.end_listen(ctx);
            }
            Some(AfterEcho::ForwardDone) => self.after_active(ctx),
            None => self.settle(ctx),
        }
    }
}
