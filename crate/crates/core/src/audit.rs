//! Post-run invariant checks over a full run history.

use std::fmt;

use crate::engine::{DeviceId, SimTime};
use crate::metrics::{PacketLedger, ReceiverTally};
use crate::radio::{Capture, RadioState, Timeline, Transmission};
use crate::sim::RunHistory;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub check: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.check, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub checks_run: Vec<&'static str>,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn fail(&mut self, check: &'static str, message: String) {
        self.violations.push(Violation { check, message });
    }
}

fn overlaps(a: (SimTime, SimTime), b: (SimTime, SimTime)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

fn segments_matching(
    timeline: &Timeline,
    end: SimTime,
    pred: impl Fn(RadioState) -> bool,
) -> Vec<(SimTime, SimTime)> {
    timeline.segments(end).into_iter().filter(|s| pred(s.2)).map(|s| (s.0, s.1)).collect()
}

fn conservation(report: &mut AuditReport, who: &str, tally: &ReceiverTally, expected: u64) {
    if tally.accounted() != tally.attempts {
        report.fail(
            "conservation",
            format!("{who}: buckets sum to {} but {} receptions were attempted", tally.accounted(), tally.attempts),
        );
    }
    if tally.attempts != expected {
        report.fail(
            "conservation",
            format!("{who}: {} receptions booked for {expected} ended transmissions", tally.attempts),
        );
    }
}

fn ended_by_others(ledger: &PacketLedger, rx: DeviceId) -> u64 {
    ledger
        .transmissions_ended
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != rx.index())
        .map(|(_, n)| n)
        .sum()
}

/// Runs every check against a run recorded with history enabled.
pub fn audit_run(history: &RunHistory, ledger: &PacketLedger) -> AuditReport {
    let mut report = AuditReport::default();
    let end = history.end;

    report.checks_run.push("conservation");
    if let Some(relay) = history.relay {
        conservation(&mut report, "relay", &ledger.relay, ended_by_others(ledger, relay));
    }
    conservation(&mut report, "gateway", &ledger.gateway, ended_by_others(ledger, history.gateway));
    let decided = history.captures.len() as u64;
    let booked = ledger.gateway.attempts + if history.relay.is_some() { ledger.relay.attempts } else { 0 };
    if decided != booked {
        report.fail("conservation", format!("{decided} capture decisions but {booked} booked receptions"));
    }

    report.checks_run.push("receive-while-listening");
    for c in &history.captures {
        if c.capture != Capture::Received {
            continue;
        }
        let timeline = &history.timelines[c.rx.index()];
        let bad = timeline
            .states_during(c.tx.start, c.tx.end)
            .find(|s| *s != RadioState::Listening(c.tx.channel));
        if let Some(state) = bad {
            report.fail(
                "receive-while-listening",
                format!("device {} received tx {} while {:?}", c.rx.0, c.tx.id.0, state),
            );
        }
    }

    if let Some(relay) = history.relay {
        let relay_tx: Vec<&Transmission> = history.transmissions.iter().filter(|t| t.tx_device == relay).collect();
        let timeline = &history.timelines[relay.index()];

        report.checks_run.push("half-duplex");
        let listening = segments_matching(timeline, end, |s| matches!(s, RadioState::Listening(_)));
        for t in &relay_tx {
            if listening.iter().any(|seg| overlaps(*seg, (t.start, t.end))) {
                report.fail("half-duplex", format!("relay listened during its own tx {}", t.id.0));
            }
        }

        report.checks_run.push("sleep-quiet");
        let asleep = segments_matching(timeline, end, |s| s == RadioState::Asleep);
        for t in &relay_tx {
            if asleep.iter().any(|seg| overlaps(*seg, (t.start, t.end))) {
                report.fail("sleep-quiet", format!("relay transmitted tx {} while asleep", t.id.0));
            }
        }
        for c in history.captures.iter().filter(|c| c.rx == relay && c.capture == Capture::Received) {
            if asleep.iter().any(|seg| overlaps(*seg, (c.tx.start, c.tx.end))) {
                report.fail("sleep-quiet", format!("relay received tx {} while asleep", c.tx.id.0));
            }
        }

        report.checks_run.push("filter");
        for t in &relay_tx {
            if !history.member.get(t.packet.origin.index()).copied().unwrap_or(false) {
                report.fail("filter", format!("relay echoed non-member origin {}", t.packet.origin.0));
            }
        }
        for (i, n) in ledger.relay_counted.iter().enumerate() {
            if *n > 0 && !history.member[i] {
                report.fail("filter", format!("relay counted {n} events from non-member device {i}"));
            }
        }

        if history.immediate {
            // identical repeats are booked separately, so this holds for any duplicate rate
            report.checks_run.push("echo-count");
            let (echoes, counted) = (ledger.echo_events_sent, ledger.relay.counted);
            if echoes != counted {
                report.fail("echo-count", format!("{echoes} echo events for {counted} counted packets"));
            }
        }
    }

    report
}
