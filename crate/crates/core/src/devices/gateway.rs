use crate::engine::{DeviceId, EventKind, RngStream, SimTime};
use crate::radio::{Channel, RadioState};

use super::{Ctx, GatewayConfig};

/// Always-on scanner with a processing dead time after every capture.
///
/// The scan schedule starts at a random channel and phase so it does not
/// lock onto a relay that boots at the same instant.
#[derive(Debug, Clone)]
pub struct Gateway {
    id: DeviceId,
    cfg: GatewayConfig,
    rng: RngStream,
    channel: Channel,
    next_channel: Channel,
    window_open: bool,
    busy_until: Option<SimTime>,
}

impl Gateway {
    pub fn new(id: DeviceId, cfg: GatewayConfig, seed: u64) -> Self {
        let rng = RngStream::for_device(seed, &cfg.id, "phase");
        Self {
            id,
            cfg,
            rng,
            channel: Channel::Ch37,
            next_channel: Channel::Ch37,
            window_open: false,
            busy_until: None,
        }
    }

    pub fn id(&self) -> DeviceId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.cfg.id
    }

    pub fn start(&mut self, ctx: &mut Ctx) {
        let interval = self.cfg.scan_interval_ms * 1_000;
        let window = self.cfg.scan_window_ms * 1_000;
        let ch = self.rng.uniform_u64(0, 2).expect("static range") as usize;
        // time already spent in the first dwell
        let elapsed = self.rng.uniform_u64(0, interval - 1).expect("interval validated positive");
        self.channel = Channel::ALL[ch];
        self.next_channel = self.channel.next();
        self.window_open = elapsed < window;
        if self.window_open && window < interval {
            ctx.schedule(ctx.now + (window - elapsed), self.id, EventKind::ScanWindowEnd);
        }
        ctx.schedule(ctx.now + (interval - elapsed), self.id, EventKind::ChannelHop);
        self.settle(ctx);
    }

    fn start_dwell(&mut self, ctx: &mut Ctx) {
        let interval = self.cfg.scan_interval_ms * 1_000;
        let window = self.cfg.scan_window_ms * 1_000;
        self.channel = self.next_channel;
        self.next_channel = self.channel.next();
        self.window_open = window > 0;
        if window > 0 && window < interval {
            ctx.schedule(ctx.now + window, self.id, EventKind::ScanWindowEnd);
        }
        ctx.schedule(ctx.now + interval, self.id, EventKind::ChannelHop);
        self.settle(ctx);
    }

    fn settle(&mut self, ctx: &mut Ctx) {
        let state = if self.busy_until.is_some() {
            RadioState::Busy
        } else if self.window_open {
            RadioState::Listening(self.channel)
        } else {
            RadioState::Off
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

    /// Any successful capture, member or not, occupies the host for the dead time.
    pub fn on_receive(&mut self, ctx: &mut Ctx) {
        let dead = self.cfg.processing_dead_time_us;
        if dead == 0 {
            return;
        }
        let until = ctx.now + dead;
        self.busy_until = Some(until);
        ctx.schedule(until, self.id, EventKind::GatewayFree);
        self.settle(ctx);
    }

    pub fn on_gateway_free(&mut self, ctx: &mut Ctx) -> String {
        if self.busy_until == Some(ctx.now) {
            self.busy_until = None;
            self.settle(ctx);
        }
        format!("ch={}", self.channel)
    }
}
