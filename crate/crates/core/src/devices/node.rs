use crate::engine::{DeviceId, EventKind, RngStream};
use crate::radio::{AdvPacket, Channel, Transmission};

use super::{pdu_detail, Ctx, NodeConfig};

/// Upper bound of the random advertising delay.
pub const ADV_DELAY_MAX_US: u64 = 10_000;

/// Periodic advertiser. Each event sends the same PDU on 37, 38, 39.
#[derive(Debug, Clone)]
pub struct Node {
    id: DeviceId,
    cfg: NodeConfig,
    member: bool,
    adv_rng: RngStream,
    link_rng: RngStream,
    seq: u64,
    current: Option<AdvPacket>,
    next_pdu: usize,
}

impl Node {
    pub fn new(id: DeviceId, cfg: NodeConfig, member: bool, seed: u64) -> Self {
        let adv_rng = RngStream::for_device(seed, &cfg.id, "adv");
        let link_rng = RngStream::for_device(seed, &cfg.id, "link");
        Self { id, cfg, member, adv_rng, link_rng, seq: 0, current: None, next_pdu: 0 }
    }

    pub fn id(&self) -> DeviceId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.cfg.id
    }

    pub fn is_member(&self) -> bool {
        self.member
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    /// Advertising events started so far.
    pub fn events_started(&self) -> u64 {
        self.seq
    }

    fn period_us(&self) -> u64 {
        self.cfg.period_ms * 1_000
    }

    pub fn start(&mut self, ctx: &mut Ctx) {
        let offset = match self.cfg.start_offset_us {
            Some(us) => us,
            None => self
                .adv_rng
                .uniform_u64(0, self.period_us() - 1)
                .expect("period validated positive"),
        };
        ctx.schedule(ctx.now + offset, self.id, EventKind::AdvertiseStart);
    }

    /// Starts a new event: first PDU goes on air now, the next event is
    /// scheduled one period (plus the random delay) later.
    pub fn on_advertise_start(&mut self, ctx: &mut Ctx) -> String {
        let packet = AdvPacket::original(self.id, self.seq);
        self.seq += 1;
        ctx.ledger.record_sent_event(self.id);
        self.current = Some(packet);
        self.next_pdu = 0;

        let delay = if self.cfg.adv_delay {
            self.adv_rng.uniform_u64(0, ADV_DELAY_MAX_US).expect("static range")
        } else {
            0
        };
        let next = ctx.now + self.period_us() + delay;
        ctx.schedule(next, self.id, EventKind::AdvertiseStart);

        let tx = self.send_pdu(ctx);
        format!("{} next={}", pdu_detail(&tx), next.as_micros())
    }

    pub fn on_pdu_start(&mut self, ctx: &mut Ctx) -> String {
        let tx = self.send_pdu(ctx);
        pdu_detail(&tx)
    }

    fn send_pdu(&mut self, ctx: &mut Ctx) -> Transmission {
        let packet = self.current.expect("PDU outside an advertising event");
        let channel = Channel::ALL[self.next_pdu];
        ctx.transmit(self.id, packet, channel, self.cfg.airtime_us, &mut self.link_rng)
    }

    pub fn on_tx_end(&mut self, ctx: &mut Ctx) {
        self.next_pdu += 1;
        if self.next_pdu < Channel::ALL.len() {
            ctx.schedule(ctx.now + self.cfg.inter_channel_gap_us, self.id, EventKind::PduStart);
        } else {
            self.current = None;
        }
    }
}
