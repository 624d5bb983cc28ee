#![allow(dead_code)]

use blerelay::audit::audit_run;
use blerelay::scenario::{parse_scenario, Scenario};
use blerelay::sim::{run_scenario, RunOptions, RunOutcome};
use serde_json::Value;

pub fn scenario(doc: Value) -> Scenario {
    parse_scenario(&doc.to_string()).unwrap_or_else(|e| panic!("bad test scenario: {e}"))
}

/// Runs with full history and fails on any audit violation.
pub fn run_audited(s: &Scenario) -> RunOutcome {
    let out = run_scenario(s, RunOptions { trace: true, history: true });
    let audit = audit_run(out.history.as_ref().unwrap(), &out.ledger);
    assert!(audit.is_clean(), "audit violations: {:?}", audit.violations);
    out
}

/// Trace lines as (time_us, device, kind, detail).
pub fn trace_lines(out: &RunOutcome) -> Vec<(u64, String, String, String)> {
    out.trace
        .as_str()
        .lines()
        .map(|l| {
            let mut f = l.splitn(4, '\t');
            let t = f.next().unwrap().parse().unwrap();
            let dev = f.next().unwrap().to_string();
            let kind = f.next().unwrap().to_string();
            let detail = f.next().unwrap_or("").to_string();
            (t, dev, kind, detail)
        })
        .collect()
}
