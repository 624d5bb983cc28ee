//! Sweep orchestration, CSV output and text summaries.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{LossBreakdown, RateReport};
use crate::power::{effective_rate, PowerModel};
use crate::radio::LossReason;
use crate::scenario::{SweepParameter, SweepPoint, SweepSpec};
use crate::sim::{run_scenario, RunOptions};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Invalid(#[from] crate::scenario::ScenarioError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub point: usize,
    pub report: RateReport,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    /// Finished runs ordered by (point, seed).
    pub rows: Vec<RunRow>,
    /// First worker fault, if any. `rows` then holds the runs ordered before it.
    pub aborted: Option<String>,
    pub power: Option<PowerModel>,
    pub baseline_rate: Option<f64>,
    pub repetitions: u32,
    axes: Vec<SweepParameter>,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".into()
    }
}

/// Runs every (point, seed) pair on a pool of `jobs` threads.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepOutcome, SweepError> {
    let points = spec.points()?;
    let seeds: Vec<u64> = spec.seeds().collect();
    let tasks: Vec<(usize, u64)> =
        points.iter().flat_map(|p| seeds.iter().map(move |s| (p.index, *s))).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let results: Vec<Result<RunRow, String>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(point, seed)| {
                let mut scenario = points[point].scenario.clone();
                scenario.seed = seed;
                catch_unwind(AssertUnwindSafe(|| run_scenario(&scenario, RunOptions::default())))
                    .map(|outcome| RunRow { point, report: outcome.report })
                    .map_err(|p| format!("point {point} seed {seed}: {}", panic_message(p)))
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(results.len());
    let mut aborted = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                aborted = Some(e);
                break;
            }
        }
    }
    Ok(SweepOutcome {
        points,
        rows,
        aborted,
        power: spec.power.map(|_| spec.base.power),
        baseline_rate: spec.power.and_then(|p| p.baseline_rate),
        repetitions: spec.repetitions,
        axes: spec.axes.iter().map(|a| a.name).collect(),
    })
}

const FIXED_AXES: [SweepParameter; 4] = [
    SweepParameter::ScanIntervalMs,
    SweepParameter::RepeatIntervalMs,
    SweepParameter::NrRepeats,
    SweepParameter::DutyCycle,
];

fn float(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_infinite() => "inf".into(),
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

fn int<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn axis_cell(param: SweepParameter, value: f64) -> String {
    if param == SweepParameter::DutyCycle {
        format!("{value:.6}")
    } else {
        format!("{value}")
    }
}

/// Sample mean and standard deviation (N - 1) of the present values.
pub fn mean_std(values: impl IntoIterator<Item = Option<f64>>) -> (Option<f64>, Option<f64>) {
    let xs: Vec<f64> = values.into_iter().flatten().collect();
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

struct Cells {
    listen_ratio: Option<f64>,
    duty: Option<f64>,
    n2r: Option<f64>,
    r2g: Option<f64>,
    n2g: Option<f64>,
    battery: Option<f64>,
    effective: Option<f64>,
}

impl SweepOutcome {
    fn extra_axes(&self) -> Vec<SweepParameter> {
        self.axes.iter().copied().filter(|a| !FIXED_AXES.contains(a)).collect()
    }

    fn cells(&self, r: &RateReport) -> Cells {
        let battery = self.power.and_then(|p| r.duty_cycle.and_then(|d| p.battery_life_years(d).ok()));
        let effective = self.baseline_rate.and_then(|b| r.duty_cycle.and_then(|d| effective_rate(b, d).ok()));
        Cells {
            listen_ratio: r.listen_ratio,
            duty: r.duty_cycle,
            n2r: r.nodes_to_relay,
            r2g: r.relay_to_gateway,
            n2g: r.nodes_to_gateway,
            battery,
            effective,
        }
    }

    /// Writes the sweep as CSV. Aggregate rows follow each point when it has
    /// more than one repetition; a failed sweep ends with an `# aborted` row.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), SweepError> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let extra = self.extra_axes();
        let mut header: Vec<String> = vec!["kind".into(), "point".into()];
        header.extend(extra.iter().map(|a| a.name().to_string()));
        header.extend(
            [
                "scan_interval_ms",
                "repeat_interval_ms",
                "nr_repeats",
                "duty_cycle",
                "listen_ratio",
                "nodes_to_relay",
                "relay_to_gateway",
                "nodes_to_gateway",
                "seed",
            ]
            .map(String::from),
        );
        if self.power.is_some() {
            header.push("battery_life_years".into());
        }
        if self.baseline_rate.is_some() {
            header.push("effective_rate".into());
        }
        w.write_record(&header)?;

        let row = |kind: &str, point: &SweepPoint, r: &RateReport, c: &Cells, seed: String| -> Vec<String> {
            let mut rec = vec![kind.to_string(), point.index.to_string()];
            for a in &extra {
                let v = point.values.iter().find(|(p, _)| p == a).map(|(_, v)| *v).unwrap_or(f64::NAN);
                rec.push(axis_cell(*a, v));
            }
            rec.push(int(r.config.scan_interval_ms));
            rec.push(int(r.config.repeat_interval_ms));
            rec.push(int(r.config.nr_repeats));
            rec.push(float(c.duty));
            rec.push(float(c.listen_ratio));
            rec.push(float(c.n2r));
            rec.push(float(c.r2g));
            rec.push(float(c.n2g));
            rec.push(seed);
            if self.power.is_some() {
                rec.push(float(c.battery));
            }
            if self.baseline_rate.is_some() {
                rec.push(float(c.effective));
            }
            rec
        };

        for point in &self.points {
            let runs: Vec<&RunRow> = self.rows.iter().filter(|r| r.point == point.index).collect();
            for run in &runs {
                let c = self.cells(&run.report);
                w.write_record(row("run", point, &run.report, &c, run.report.seed.to_string()))?;
            }
            let complete = runs.len() == self.repetitions as usize;
            if self.repetitions > 1 && complete {
                let cells: Vec<Cells> = runs.iter().map(|r| self.cells(&r.report)).collect();
                let agg = |f: fn(&Cells) -> Option<f64>| mean_std(cells.iter().map(f));
                let cols = [
                    agg(|c| c.listen_ratio),
                    agg(|c| c.duty),
                    agg(|c| c.n2r),
                    agg(|c| c.r2g),
                    agg(|c| c.n2g),
                    agg(|c| c.battery),
                    agg(|c| c.effective),
                ];
                let first = &runs[0].report;
                for (kind, pick) in [("mean", 0usize), ("std", 1usize)] {
                    let get = |i: usize| if pick == 0 { cols[i].0 } else { cols[i].1 };
                    let c = Cells {
                        listen_ratio: get(0),
                        duty: get(1),
                        n2r: get(2),
                        r2g: get(3),
                        n2g: get(4),
                        battery: get(5),
                        effective: get(6),
                    };
                    w.write_record(row(kind, point, first, &c, String::new()))?;
                }
            }
        }
        if let Some(reason) = &self.aborted {
            w.write_record([format!("# aborted: {reason}")])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String, SweepError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    /// Text summary, one block per point.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for point in &self.points {
            let reports: Vec<RateReport> =
                self.rows.iter().filter(|r| r.point == point.index).map(|r| r.report.clone()).collect();
            if reports.is_empty() {
                continue;
            }
            if !point.values.is_empty() {
                let label: Vec<String> = point.values.iter().map(|(p, v)| format!("{}={v}", p.name())).collect();
                out.push_str(&format!("point {}: {}\n", point.index, label.join(" ")));
            }
            out.push_str(&emit_summary(&reports, self.power.as_ref()));
            out.push('\n');
        }
        if let Some(reason) = &self.aborted {
            out.push_str(&format!("aborted: {reason}\n"));
        }
        out
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{:.2}%", v * 100.0))
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|i| rows.iter().filter_map(|r| r.get(i)).map(String::len).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().enumerate().map(|(i, c)| format!("{c:>w$}", w = widths[i])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Aligned tables of rates, power estimates and loss reasons.
pub fn emit_summary(reports: &[RateReport], power: Option<&PowerModel>) -> String {
    let power = power.copied().unwrap_or_default();
    let mut rates = vec![[
        "seed",
        "policy",
        "scan_ms",
        "nodes->relay",
        "relay->gw",
        "nodes->gw",
        "listen",
        "duty",
        "battery_y",
    ]
    .map(String::from)
    .to_vec()];
    let battery = |r: &RateReport| r.duty_cycle.and_then(|d| power.battery_life_years(d).ok());
    for r in reports {
        rates.push(vec![
            r.seed.to_string(),
            r.config.policy.clone(),
            int(r.config.scan_interval_ms),
            pct(r.nodes_to_relay),
            pct(r.relay_to_gateway),
            pct(r.nodes_to_gateway),
            r.listen_ratio.map_or("-".into(), |v| format!("{v:.4}")),
            r.duty_cycle.map_or("-".into(), |v| format!("{v:.4}")),
            battery(r).map_or("-".into(), |v| format!("{v:.2}")),
        ]);
    }
    if reports.len() > 1 {
        let stats = [
            mean_std(reports.iter().map(|r| r.nodes_to_relay)),
            mean_std(reports.iter().map(|r| r.relay_to_gateway)),
            mean_std(reports.iter().map(|r| r.nodes_to_gateway)),
        ];
        rates.push(
            ["mean", "", "", &pct(stats[0].0), &pct(stats[1].0), &pct(stats[2].0), "", "", ""]
                .map(String::from)
                .to_vec(),
        );
        rates.push(
            ["sigma", "", "", &pct(stats[0].1), &pct(stats[1].1), &pct(stats[2].1), "", "", ""]
                .map(String::from)
                .to_vec(),
        );
    }

    let mut losses = vec![{
        let mut h = vec!["seed".to_string(), "rx".to_string(), "attempts".into(), "counted".into(), "dup".into(), "filtered".into()];
        h.extend(LossReason::ALL.iter().map(|r| r.name().to_string()));
        h
    }];
    for r in reports {
        for (rx, t) in [("relay", &r.relay), ("gateway", &r.gateway)] {
            let mut row = vec![
                r.seed.to_string(),
                rx.to_string(),
                t.attempts.to_string(),
                t.counted.to_string(),
                t.duplicates.to_string(),
                t.filtered.to_string(),
            ];
            row.extend(loss_cells(&t.lost));
            losses.push(row);
        }
    }
    format!("{}\n{}", render(&rates), render(&losses))
}

fn loss_cells(l: &LossBreakdown) -> Vec<String> {
    LossReason::ALL.iter().map(|r| l.get(*r).to_string()).collect()
}
