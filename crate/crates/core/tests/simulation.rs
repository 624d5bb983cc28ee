mod common;

use blerelay::metrics::GatewayCounting;
use blerelay::presets;
use blerelay::radio::Channel;
use blerelay::sim::{run_scenario, RunOptions};
use common::{run_audited, scenario, trace_lines};
use proptest::prelude::*;
use serde_json::json;

fn listen_only_relay(scan_interval_ms: u64, listen_time_ms: u64) -> serde_json::Value {
    json!({
        "scan_interval_ms": scan_interval_ms,
        "policy": {"kind": "batching", "listen_time_ms": listen_time_ms, "nr_repeats": 0, "repeat_interval_ms": 10}
    })
}

#[test]
fn single_node_on_listened_channel_is_always_received() {
    let s = scenario(json!({
        "duration_s": 600,
        "nodes": [{"period_ms": 1000, "start_offset_us": 0, "adv_delay": false}],
        "relay": listen_only_relay(600_000, 600_000),
        "gateway": {}
    }));
    let out = run_audited(&s);
    assert_eq!(out.ledger.sent_events[0], 600);
    assert_eq!(out.ledger.transmissions[0], 1800);
    assert_eq!(out.report.nodes_to_relay, Some(1.0));
    assert_eq!(out.ledger.relay.counted, 600);
    // the 38 and 39 copies are heard by nobody
    assert_eq!(out.ledger.relay.lost.not_tuned, 1200);
}

/// Relay channel at `t_us` when it hops every `dwell_us` starting on 37.
fn oracle_channel(t_us: u64, dwell_us: u64) -> (u64, Channel) {
    let k = t_us / dwell_us;
    (k, Channel::ALL[(k % 3) as usize])
}

/// Events a hopping listener captures, by brute force over every PDU.
fn oracle_captured(offset_us: u64, events: u64, dwell_us: u64) -> u64 {
    (0..events)
        .filter(|e| {
            let t0 = offset_us + e * 1_000_000;
            (0..3u64).any(|i| {
                let start = t0 + i * 700;
                let (k0, ch) = oracle_channel(start, dwell_us);
                let (k1, _) = oracle_channel(start + 299, dwell_us);
                k0 == k1 && ch == Channel::ALL[i as usize]
            })
        })
        .count() as u64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hopping_relay_matches_brute_force_oracle(offset in 0u64..998_000, dwell_ms in prop::sample::select(vec![50u64, 70, 350])) {
        let s = scenario(json!({
            "duration_s": 30,
            "nodes": [{"period_ms": 1000, "start_offset_us": offset, "adv_delay": false}],
            "relay": listen_only_relay(dwell_ms, dwell_ms * 60),
            "gateway": {}
        }));
        let out = run_audited(&s);
        prop_assert_eq!(out.ledger.sent_events[0], 30);
        prop_assert_eq!(out.ledger.relay.counted, oracle_captured(offset, 30, dwell_ms * 1_000));
    }
}

#[test]
fn pdu_across_a_channel_hop_is_not_tuned() {
    // 37 copy straddles the 50 ms hop, the 38 copy lands in the ch 38 dwell
    let s = scenario(json!({
        "duration_s": 1,
        "nodes": [{"period_ms": 1000, "start_offset_us": 49_900, "adv_delay": false}],
        "relay": listen_only_relay(50, 10_000),
        "gateway": {}
    }));
    let out = run_audited(&s);
    assert_eq!(out.ledger.relay.counted, 1);
    assert_eq!(out.ledger.relay.lost.not_tuned, 2);
}

#[test]
fn eleven_nodes_for_an_hour_send_39600_events() {
    let s = scenario(json!({
        "duration_s": 3600,
        "nodes": [{"count": 11, "period_ms": 1000, "adv_delay": false}],
        "gateway": {}
    }));
    let out = run_scenario(&s, RunOptions::default());
    assert_eq!(out.ledger.member_events_sent(), 39_600);
}

#[test]
fn adv_delay_keeps_gaps_within_ten_ms() {
    let s = scenario(json!({
        "duration_s": 120,
        "nodes": [{"id": "n", "period_ms": 1000}],
        "gateway": {}
    }));
    let out = run_audited(&s);
    let starts: Vec<u64> = trace_lines(&out)
        .into_iter()
        .filter(|l| l.1 == "n" && l.2 == "advertise-start")
        .map(|l| l.0)
        .collect();
    assert!(starts.len() > 100);
    let gaps: Vec<u64> = starts.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(gaps.iter().all(|g| (1_000_000..=1_010_000).contains(g)), "{gaps:?}");
    assert!(gaps.iter().any(|g| *g != gaps[0]));
}

#[test]
fn relay_visits_200_dwells_per_ten_second_listen() {
    let s = scenario(json!({
        "duration_s": 10.5,
        "nodes": [{"period_ms": 1000}],
        "relay": {"scan_interval_ms": 50, "sleep_time_ms": 1000,
                  "policy": {"kind": "batching", "listen_time_ms": 10000, "nr_repeats": 0, "repeat_interval_ms": 10}},
        "gateway": {}
    }));
    let out = run_audited(&s);
    let lines = trace_lines(&out);
    let hops: Vec<String> =
        lines.iter().filter(|l| l.1 == "relay" && l.2 == "channel-hop").map(|l| l.3.clone()).collect();
    // the first dwell starts with the cycle, every other one with a hop
    assert_eq!(hops.len() + 1, 200);
    let per_channel = |c: &str| hops.iter().filter(|d| d.as_str() == format!("ch={c}")).count();
    assert_eq!((per_channel("37"), per_channel("38"), per_channel("39")), (66, 67, 66));
    assert!(out.report.measured_duty.unwrap() < 1.0);
}

#[test]
fn zero_sleep_means_full_duty() {
    let out = run_audited(&scenario(json!({
        "duration_s": 30,
        "nodes": [{"period_ms": 1000}],
        "relay": {"scan_interval_ms": 50},
        "gateway": {}
    })));
    assert_eq!(out.report.duty_cycle, Some(1.0));
    assert_eq!(out.report.measured_duty, Some(1.0));
}

fn immediate(dup: f64, members: u32, noise: u32) -> serde_json::Value {
    json!({
        "duration_s": 60,
        "nodes": (if members > 0 { json!([{"count": members, "period_ms": 1000}]) } else { json!([]) }),
        "noise_nodes": (if noise > 0 { json!([{"count": noise, "period_ms": 300}]) } else { json!([]) }),
        "relay": {"scan_interval_ms": 50, "duplicate_probability": dup},
        "gateway": {}
    })
}

#[test]
fn immediate_sends_one_echo_per_counted_packet() {
    let out = run_audited(&scenario(immediate(0.0, 3, 2)));
    let relay = out.ledger.transmissions.len() - 2;
    assert!(out.ledger.relay.counted > 0);
    assert_eq!(out.ledger.echo_events_sent, out.ledger.relay.counted);
    assert_eq!(out.ledger.echo_repeats_sent, 0);
    // one PDU per echo
    assert_eq!(out.ledger.transmissions[relay], out.ledger.echo_events_sent);
}

#[test]
fn immediate_duplicates_double_the_echoes() {
    let out = run_audited(&scenario(immediate(1.0, 2, 0)));
    let relay = out.ledger.transmissions.len() - 2;
    assert_eq!(out.ledger.echo_repeats_sent, out.ledger.echo_events_sent);
    assert_eq!(out.ledger.transmissions[relay], 2 * out.ledger.echo_events_sent);
}

#[test]
fn noise_is_filtered_and_never_echoed() {
    let out = run_audited(&scenario(immediate(0.0, 0, 3)));
    assert!(out.ledger.relay.filtered > 0);
    assert_eq!(out.ledger.relay.counted, 0);
    assert_eq!(out.ledger.echo_events_sent, 0);
    assert_eq!(out.report.nodes_to_relay, None);
    assert_eq!(out.report.relay_to_gateway, None);
}

#[test]
fn immediate_same_dwell_resume_hears_more() {
    let mut next = immediate(0.0, 11, 0);
    next["duration_s"] = json!(120);
    let mut same = next.clone();
    same["relay"]["policy"] = json!({"kind": "immediate", "resume": "same-dwell"});
    let a = run_audited(&scenario(next));
    let b = run_audited(&scenario(same));
    assert!(b.report.nodes_to_relay.unwrap() > a.report.nodes_to_relay.unwrap());
}

#[test]
fn three_channel_echoes_reach_a_scanning_gateway() {
    let mut doc = immediate(0.0, 2, 0);
    doc["relay"]["policy"] = json!({"kind": "immediate", "echo_channels": "all"});
    doc["links"] = json!({"defaults": {"node_to_gateway": 0.0}});
    let out = run_audited(&scenario(doc));
    let relay = out.ledger.transmissions.len() - 2;
    assert_eq!(out.ledger.transmissions[relay], 3 * out.ledger.echo_events_sent);
    assert!(out.report.relay_to_gateway.unwrap() > 0.9);
}

#[test]
fn batching_echoes_every_heard_origin_exactly_n_times() {
    // one 10 s dwell on ch 37: n0 is heard 10 times, n1 4 times, n2 never
    let s = scenario(json!({
        "duration_s": 10.5,
        "nodes": [
            {"id": "n0", "period_ms": 1000, "start_offset_us": 0, "adv_delay": false},
            {"id": "n1", "period_ms": 2500, "start_offset_us": 300000, "adv_delay": false},
            {"id": "n2", "period_ms": 1000, "start_offset_us": 600000, "adv_delay": false}
        ],
        "relay": {"scan_interval_ms": 10000, "sleep_time_ms": 5000,
                  "policy": {"kind": "batching", "listen_time_ms": 10000, "nr_repeats": 5, "repeat_interval_ms": 10}},
        "gateway": {},
        "links": {"pairs": [{"from": "n2", "to": "relay", "reach": false}]}
    }));
    let out = run_audited(&s);
    assert_eq!(out.ledger.relay_counted[..3], [10, 4, 0]);
    let slots: Vec<String> = trace_lines(&out)
        .into_iter()
        .filter(|l| l.1 == "relay" && l.2 == "forward-slot")
        .map(|l| l.3)
        .collect();
    let for_origin = |o: u32| slots.iter().filter(|d| d.contains(&format!("origin={o} "))).count();
    assert_eq!((for_origin(0), for_origin(1), for_origin(2)), (5, 5, 0));
    assert_eq!(out.ledger.echo_events_sent, 10);
    // three channels per echo
    assert_eq!(out.ledger.transmissions[3], 30);
}

#[test]
fn batching_capped_mode_uses_heard_counts() {
    let s = scenario(json!({
        "duration_s": 10.5,
        "nodes": [
            {"id": "n0", "period_ms": 1000, "start_offset_us": 0, "adv_delay": false},
            {"id": "n1", "period_ms": 2500, "start_offset_us": 300000, "adv_delay": false}
        ],
        "relay": {"scan_interval_ms": 10000, "sleep_time_ms": 5000,
                  "policy": {"kind": "batching", "listen_time_ms": 10000, "nr_repeats": 5, "repeat_interval_ms": 10,
                             "echo_count": "capped"}},
        "gateway": {}
    }));
    let out = run_audited(&s);
    assert_eq!(out.ledger.echo_events_sent, 5 + 4);
}

#[test]
fn zero_repeats_never_transmits_and_sleeps() {
    let s = scenario(json!({
        "duration_s": 60,
        "nodes": [{"count": 2, "period_ms": 1000}],
        "relay": {"scan_interval_ms": 50, "sleep_time_ms": 10000,
                  "policy": {"kind": "batching", "listen_time_ms": 5000, "nr_repeats": 0, "repeat_interval_ms": 10}},
        "gateway": {}
    }));
    let out = run_audited(&s);
    assert_eq!(out.ledger.transmissions[2], 0);
    assert!(out.ledger.relay.lost.asleep > 0);
    let d = out.report.measured_duty.unwrap();
    assert!((d - 5.0 / 15.0).abs() < 0.01, "{d}");
}

#[test]
fn sleeping_relay_neither_hears_nor_sends() {
    let mut s = presets::batching(10, 5);
    s.duration_s = 120.0;
    s.relay.as_mut().unwrap().sleep_time_ms = 20_000;
    let out = run_audited(&s);
    assert!(out.ledger.relay.lost.asleep > 0);
    assert!(out.ledger.echo_events_sent > 0);
}

#[test]
fn relay_asleep_all_run_receives_nothing() {
    let s = scenario(json!({
        "duration_s": 30,
        "nodes": [{"period_ms": 1000, "start_offset_us": 500000}],
        "relay": {"scan_interval_ms": 1, "sleep_time_ms": 100000,
                  "policy": {"kind": "batching", "listen_time_ms": 1, "nr_repeats": 5, "repeat_interval_ms": 10}},
        "gateway": {}
    }));
    let out = run_audited(&s);
    assert_eq!(out.report.nodes_to_relay, Some(0.0));
    assert_eq!(out.ledger.relay.lost.asleep, out.ledger.relay.attempts);
}

#[test]
fn gateway_dead_time_blocks_back_to_back_pdus() {
    // b's PDUs follow a's by 350 us, well inside the dead time a's capture starts
    let doc = |dead: u64| {
        json!({
            "duration_s": 5,
            "seed": 3,
            "nodes": [
                {"id": "a", "period_ms": 1000, "start_offset_us": 0, "adv_delay": false},
                {"id": "b", "period_ms": 1000, "start_offset_us": 350, "adv_delay": false}
            ],
            "gateway": {"scan_interval_ms": 10000, "processing_dead_time_us": dead}
        })
    };
    let busy = run_audited(&scenario(doc(1000)));
    assert_eq!(busy.ledger.gateway.counted, 5);
    assert!(busy.ledger.gateway.lost.rx_busy >= 5);
    assert_eq!(busy.ledger.gateway_direct_events, 5);
    let free = run_audited(&scenario(doc(0)));
    assert_eq!(free.ledger.gateway.counted, 10);
    assert_eq!(free.ledger.gateway.lost.rx_busy, 0);
}

#[test]
fn no_relay_and_no_direct_link_delivers_nothing() {
    let out = run_audited(&scenario(json!({
        "duration_s": 30,
        "nodes": [{"period_ms": 1000}],
        "gateway": {},
        "links": {"defaults": {"node_to_gateway": 0.0}}
    })));
    assert_eq!(out.report.nodes_to_gateway, Some(0.0));
    assert_eq!(out.report.nodes_to_relay, None);
    assert_eq!(out.report.listen_ratio, None);
    assert_eq!(out.ledger.gateway.lost.unreachable, out.ledger.gateway.attempts);
}

#[test]
fn gateway_radio_off_receives_no_echo() {
    let mut doc = immediate(0.0, 2, 0);
    doc["gateway"] = json!({"scan_window_ms": 0});
    let out = run_audited(&scenario(doc));
    assert!(out.ledger.echo_events_sent > 0);
    assert_eq!(out.report.relay_to_gateway, Some(0.0));
}

#[test]
fn collisions_destroy_overlapping_pdus() {
    let out = run_audited(&scenario(json!({
        "duration_s": 5,
        "nodes": [
            {"id": "a", "period_ms": 1000, "start_offset_us": 1000, "adv_delay": false},
            {"id": "b", "period_ms": 1000, "start_offset_us": 1100, "adv_delay": false}
        ],
        "relay": listen_only_relay(10_000, 10_000),
        "gateway": {}
    })));
    assert_eq!(out.ledger.relay.counted, 0);
    assert_eq!(out.ledger.relay.lost.collision, 10);
}

#[test]
fn accounting_modes_differ_under_duplicates() {
    let mut doc = immediate(1.0, 3, 0);
    doc["links"] = json!({"defaults": {"node_to_gateway": 0.0}});
    // the repeat follows its echo within the default dead time
    doc["gateway"] = json!({"processing_dead_time_us": 0});
    let rate = |mode: &str| {
        let mut d = doc.clone();
        d["accounting"] = json!({"gateway_counting": mode});
        run_audited(&scenario(d)).report.nodes_to_gateway.unwrap()
    };
    let events = rate("echo-events");
    let raw = rate("raw");
    let unique = rate("unique-origin");
    assert!(raw > events, "{raw} {events}");
    assert!(unique <= events + 1e-12);
    assert_eq!(blerelay::scenario::Accounting::default().gateway_counting, GatewayCounting::EchoEvents);
}

#[test]
fn same_seed_same_trace_and_report() {
    let mut s = presets::immediate(50);
    s.duration_s = 30.0;
    let a = run_scenario(&s, RunOptions { trace: true, history: false });
    let b = run_scenario(&s, RunOptions { trace: true, history: false });
    assert!(a.trace.lines() > 1000);
    assert_eq!(a.trace.as_str(), b.trace.as_str());
    assert_eq!(a.report, b.report);
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    s.seed = 2;
    let c = run_scenario(&s, RunOptions { trace: true, history: false });
    assert_ne!(a.trace.as_str(), c.trace.as_str());
}

#[test]
fn adding_a_device_leaves_other_streams_alone() {
    let base = json!({
        "duration_s": 30,
        "nodes": [{"id": "n", "period_ms": 1000}],
        "relay": {"scan_interval_ms": 50},
        "gateway": {}
    });
    let mut extra = base.clone();
    extra["noise_nodes"] = json!([{"id": "x", "period_ms": 700}]);
    extra["links"] = json!({"pairs": [{"from": "x", "to": "relay", "reach": false}, {"from": "x", "to": "gateway", "reach": false}]});
    let starts = |doc: serde_json::Value| -> Vec<u64> {
        let out = run_scenario(&scenario(doc), RunOptions { trace: true, history: false });
        trace_lines(&out).into_iter().filter(|l| l.1 == "n" && l.2 == "advertise-start").map(|l| l.0).collect()
    };
    assert_eq!(starts(base), starts(extra));
}

#[test]
fn preset_populations_pass_every_audit() {
    for mut s in [presets::listen_only(350), presets::immediate(200), presets::batching(25, 2)] {
        s.duration_s = 90.0;
        s.relay.as_mut().unwrap().duplicate_probability = 0.3;
        s.relay.as_mut().unwrap().sleep_time_ms = 7_000;
        let out = run_audited(&s);
        assert!(out.ledger.member_events_sent() > 0);
    }
}
