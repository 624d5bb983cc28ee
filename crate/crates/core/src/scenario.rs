//! Scenario and sweep documents.
//!
//! Documents are JSON. Parsing goes through loose `*Doc` types (optional
//! fields, `deny_unknown_fields`) which are then resolved into a fully
//! populated [`Scenario`] with every default filled in. A serialized
//! `Scenario` parses back to itself.

use std::collections::HashSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{
    EchoChannels, EchoCount, ForwardingPolicy, GatewayConfig, NodeConfig, RelayConfig, ResumeMode,
    DEFAULT_AIRTIME_US, DEFAULT_GATEWAY_DEAD_TIME_US, DEFAULT_GATEWAY_SCAN_MS, DEFAULT_INTER_CHANNEL_GAP_US,
    DEFAULT_MODE_SWITCH_LATENCY_US, DEFAULT_SCAN_TIME_MS,
};
use crate::metrics::{GatewayCounting, DEFAULT_DEDUP_HORIZON_US};
use crate::power::PowerModel;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ScenarioError {
    pub fn path(&self) -> &str {
        match self {
            ScenarioError::Parse { path, .. } | ScenarioError::Invalid { path, .. } | ScenarioError::Io { path, .. } => {
                path
            }
        }
    }

    fn prefixed(self, prefix: &str) -> Self {
        match self {
            ScenarioError::Parse { path, message } => ScenarioError::Parse { path: join_path(prefix, &path), message },
            ScenarioError::Invalid { path, message } => {
                ScenarioError::Invalid { path: join_path(prefix, &path), message }
            }
            io => io,
        }
    }
}

fn join_path(prefix: &str, path: &str) -> String {
    if path.is_empty() || path == "." {
        prefix.to_string()
    } else {
        format!("{prefix}.{path}")
    }
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { path: path.into(), message: message.into() }
}

fn from_json<T: DeserializeOwned>(doc: &str) -> Result<T, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(doc);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::Parse { path, message: e.into_inner().to_string() }
    })
}

fn from_value<T: DeserializeOwned>(value: serde_json::Value) -> Result<T, ScenarioError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::Parse { path, message: e.into_inner().to_string() }
    })
}

/// Radio parameters nodes and relay inherit unless they override them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioDefaults {
    pub airtime_us: u64,
    pub inter_channel_gap_us: u64,
    pub adv_delay: bool,
}

impl Default for RadioDefaults {
    fn default() -> Self {
        Self { airtime_us: DEFAULT_AIRTIME_US, inter_channel_gap_us: DEFAULT_INTER_CHANNEL_GAP_US, adv_delay: true }
    }
}

/// Reach probability per device class for pairs not listed explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkDefaults {
    pub node_to_relay: f64,
    pub node_to_gateway: f64,
    pub relay_to_gateway: f64,
    pub noise_to_relay: f64,
    pub noise_to_gateway: f64,
}

impl Default for LinkDefaults {
    fn default() -> Self {
        Self { node_to_relay: 1.0, node_to_gateway: 1.0, relay_to_gateway: 1.0, noise_to_relay: 1.0, noise_to_gateway: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkPair {
    pub from: String,
    pub to: String,
    pub reach: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LinkSpec {
    pub defaults: LinkDefaults,
    /// Explicit pairs; later entries win.
    pub pairs: Vec<LinkPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Accounting {
    pub gateway_counting: GatewayCounting,
    pub dedup_horizon_us: u64,
}

impl Default for Accounting {
    fn default() -> Self {
        Self { gateway_counting: GatewayCounting::EchoEvents, dedup_horizon_us: DEFAULT_DEDUP_HORIZON_US }
    }
}

/// A fully resolved, validated simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub duration_s: f64,
    pub seed: u64,
    pub radio: RadioDefaults,
    pub nodes: Vec<NodeConfig>,
    pub noise_nodes: Vec<NodeConfig>,
    pub relay: Option<RelayConfig>,
    pub gateway: GatewayConfig,
    pub links: LinkSpec,
    pub accounting: Accounting,
    pub power: PowerModel,
}

// ---------------------------------------------------------------------------
// Documents

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    duration_s: f64,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    radio: RadioDefaults,
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    noise_nodes: Vec<NodeDoc>,
    #[serde(default)]
    relay: Option<RelayDoc>,
    gateway: GatewayDoc,
    #[serde(default)]
    links: LinksDoc,
    #[serde(default)]
    accounting: Accounting,
    #[serde(default)]
    power: PowerModel,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: Option<String>,
    /// Expands into `count` nodes named `<id>-<i>`.
    count: Option<u32>,
    period_ms: u64,
    start_offset_us: Option<u64>,
    airtime_us: Option<u64>,
    inter_channel_gap_us: Option<u64>,
    adv_delay: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelayDoc {
    id: Option<String>,
    scan_interval_ms: u64,
    scan_window_ms: Option<u64>,
    scan_time_ms: Option<u64>,
    sleep_time_ms: Option<u64>,
    #[serde(default)]
    policy: PolicyDoc,
    mode_switch_latency_us: Option<u64>,
    duplicate_probability: Option<f64>,
    airtime_us: Option<u64>,
    inter_channel_gap_us: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum PolicyDoc {
    Immediate {
        resume: Option<ResumeMode>,
        echo_channels: Option<EchoChannels>,
    },
    Batching {
        listen_time_ms: Option<u64>,
        nr_repeats: u32,
        repeat_interval_ms: u64,
        echo_count: Option<EchoCount>,
        echo_channels: Option<EchoChannels>,
    },
}

impl Default for PolicyDoc {
    fn default() -> Self {
        PolicyDoc::Immediate { resume: None, echo_channels: None }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GatewayDoc {
    id: Option<String>,
    scan_interval_ms: Option<u64>,
    scan_window_ms: Option<u64>,
    processing_dead_time_us: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinksDoc {
    #[serde(default)]
    defaults: LinkDefaults,
    #[serde(default)]
    pairs: Vec<LinkPairDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkPairDoc {
    from: String,
    to: String,
    reach: Reach,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Reach {
    Flag(bool),
    Probability(f64),
}

fn expand_nodes(docs: Vec<NodeDoc>, radio: &RadioDefaults, default_prefix: &str) -> Vec<NodeConfig> {
    let mut out = Vec::new();
    for doc in docs {
        let make = |id: String| NodeConfig {
            id,
            period_ms: doc.period_ms,
            start_offset_us: doc.start_offset_us,
            airtime_us: doc.airtime_us.unwrap_or(radio.airtime_us),
            inter_channel_gap_us: doc.inter_channel_gap_us.unwrap_or(radio.inter_channel_gap_us),
            adv_delay: doc.adv_delay.unwrap_or(radio.adv_delay),
        };
        match doc.count {
            Some(n) => {
                let prefix = doc.id.clone().unwrap_or_else(|| default_prefix.to_string());
                out.extend((0..n).map(|i| make(format!("{prefix}-{i}"))));
            }
            None => {
                let id = doc.id.clone().unwrap_or_else(|| format!("{default_prefix}-{}", out.len()));
                out.push(make(id));
            }
        }
    }
    out
}

impl ScenarioDoc {
    fn resolve(self) -> Scenario {
        let radio = self.radio;
        let nodes = expand_nodes(self.nodes, &radio, "node");
        let noise_nodes = expand_nodes(self.noise_nodes, &radio, "noise");
        let relay = self.relay.map(|r| {
            let scan_time_ms = r.scan_time_ms.unwrap_or(DEFAULT_SCAN_TIME_MS);
            let policy = match r.policy {
                PolicyDoc::Immediate { resume, echo_channels } => ForwardingPolicy::Immediate {
                    resume: resume.unwrap_or_default(),
                    echo_channels: echo_channels.unwrap_or(EchoChannels::First),
                },
                PolicyDoc::Batching { listen_time_ms, nr_repeats, repeat_interval_ms, echo_count, echo_channels } => {
                    ForwardingPolicy::Batching {
                        listen_time_ms: listen_time_ms.unwrap_or(scan_time_ms),
                        nr_repeats,
                        repeat_interval_ms,
                        echo_count: echo_count.unwrap_or_default(),
                        echo_channels: echo_channels.unwrap_or(EchoChannels::All),
                    }
                }
            };
            RelayConfig {
                id: r.id.unwrap_or_else(|| "relay".into()),
                scan_interval_ms: r.scan_interval_ms,
                scan_window_ms: r.scan_window_ms.unwrap_or(r.scan_interval_ms),
                scan_time_ms,
                sleep_time_ms: r.sleep_time_ms.unwrap_or(0),
                policy,
                mode_switch_latency_us: r.mode_switch_latency_us.unwrap_or(DEFAULT_MODE_SWITCH_LATENCY_US),
                duplicate_probability: r.duplicate_probability.unwrap_or(0.0),
                airtime_us: r.airtime_us.unwrap_or(radio.airtime_us),
                inter_channel_gap_us: r.inter_channel_gap_us.unwrap_or(radio.inter_channel_gap_us),
            }
        });
        let g = self.gateway;
        let scan = g.scan_interval_ms.unwrap_or(DEFAULT_GATEWAY_SCAN_MS);
        let gateway = GatewayConfig {
            id: g.id.unwrap_or_else(|| "gateway".into()),
            scan_interval_ms: scan,
            scan_window_ms: g.scan_window_ms.unwrap_or(scan),
            processing_dead_time_us: g.processing_dead_time_us.unwrap_or(DEFAULT_GATEWAY_DEAD_TIME_US),
        };
        let pairs = self
            .links
            .pairs
            .into_iter()
            .map(|p| LinkPair {
                from: p.from,
                to: p.to,
                reach: match p.reach {
                    Reach::Flag(b) => f64::from(u8::from(b)),
                    Reach::Probability(x) => x,
                },
            })
            .collect();
        Scenario {
            duration_s: self.duration_s,
            seed: self.seed,
            radio,
            nodes,
            noise_nodes,
            relay,
            gateway,
            links: LinkSpec { defaults: self.links.defaults, pairs },
            accounting: self.accounting,
            power: self.power,
        }
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(doc: &str) -> Result<Scenario, ScenarioError> {
    let scenario = from_json::<ScenarioDoc>(doc)?.resolve();
    scenario.validate()?;
    Ok(scenario)
}

fn read_file(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
}

fn check_probability(path: String, p: f64) -> Result<(), ScenarioError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(path, format!("probability {p} outside [0, 1]")))
    }
}

fn check_node(path: &str, n: &NodeConfig) -> Result<(), ScenarioError> {
    if n.period_ms == 0 {
        return Err(invalid(format!("{path}.period_ms"), "period must be positive"));
    }
    if n.airtime_us == 0 {
        return Err(invalid(format!("{path}.airtime_us"), "airtime must be positive"));
    }
    if n.event_span_us() >= n.period_ms * 1_000 {
        return Err(invalid(
            format!("{path}.period_ms"),
            format!("period must exceed the advertising event span of {} us", n.event_span_us()),
        ));
    }
    Ok(())
}

fn check_scan(path: &str, interval: u64, window: u64) -> Result<(), ScenarioError> {
    if interval == 0 {
        return Err(invalid(format!("{path}.scan_interval_ms"), "scan interval must be positive"));
    }
    if window > interval {
        return Err(invalid(
            format!("{path}.scan_window_ms"),
            format!("scan_window ({window} ms) must not exceed scan_interval ({interval} ms)"),
        ));
    }
    Ok(())
}

fn check_relay(r: &RelayConfig) -> Result<(), ScenarioError> {
    check_scan("relay", r.scan_interval_ms, r.scan_window_ms)?;
    if r.airtime_us == 0 {
        return Err(invalid("relay.airtime_us", "airtime must be positive"));
    }
    check_probability("relay.duplicate_probability".into(), r.duplicate_probability)?;
    match r.policy {
        ForwardingPolicy::Immediate { .. } => {
            if r.scan_time_ms == 0 {
                return Err(invalid("relay.scan_time_ms", "scan time must be positive"));
            }
        }
        ForwardingPolicy::Batching { listen_time_ms, repeat_interval_ms, .. } => {
            if listen_time_ms == 0 {
                return Err(invalid("relay.policy.listen_time_ms", "listen time must be positive"));
            }
            if repeat_interval_ms == 0 {
                return Err(invalid("relay.policy.repeat_interval_ms", "repeat interval must be positive"));
            }
            if repeat_interval_ms * 1_000 < r.echo_span_us() {
                return Err(invalid(
                    "relay.policy.repeat_interval_ms",
                    format!("repeat interval shorter than one echo event ({} us)", r.echo_span_us()),
                ));
            }
        }
    }
    Ok(())
}

impl Scenario {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        parse_scenario(&read_file(path.as_ref())?)
    }

    /// Pretty JSON that parses back to an identical scenario.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn member_count(&self) -> usize {
        self.nodes.len()
    }

    /// Device names in simulation index order: members, noise, relay, gateway.
    pub fn device_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.nodes.iter().chain(&self.noise_nodes).map(|n| n.id.as_str()).collect();
        if let Some(r) = &self.relay {
            names.push(&r.id);
        }
        names.push(&self.gateway.id);
        names
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration_s", "duration must be positive"));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            check_node(&format!("nodes[{i}]"), n)?;
        }
        for (i, n) in self.noise_nodes.iter().enumerate() {
            check_node(&format!("noise_nodes[{i}]"), n)?;
        }
        if let Some(r) = &self.relay {
            check_relay(r)?;
        }
        check_scan("gateway", self.gateway.scan_interval_ms, self.gateway.scan_window_ms)?;

        let names = self.device_names();
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(*name) {
                return Err(invalid("id", format!("duplicate device id `{name}`")));
            }
        }

        let d = &self.links.defaults;
        for (field, p) in [
            ("node_to_relay", d.node_to_relay),
            ("node_to_gateway", d.node_to_gateway),
            ("relay_to_gateway", d.relay_to_gateway),
            ("noise_to_relay", d.noise_to_relay),
            ("noise_to_gateway", d.noise_to_gateway),
        ] {
            check_probability(format!("links.defaults.{field}"), p)?;
        }
        for (i, pair) in self.links.pairs.iter().enumerate() {
            for (field, name) in [("from", &pair.from), ("to", &pair.to)] {
                if !seen.contains(name.as_str()) {
                    return Err(invalid(format!("links.pairs[{i}].{field}"), format!("unknown device `{name}`")));
                }
            }
            if pair.from == pair.to {
                return Err(invalid(format!("links.pairs[{i}]"), "self links are not allowed"));
            }
            check_probability(format!("links.pairs[{i}].reach"), pair.reach)?;
        }

        self.power.validate().map_err(|e| invalid("power", e.to_string()))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Sweeps

/// Scenario parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    ScanIntervalMs,
    ScanWindowMs,
    RepeatIntervalMs,
    NrRepeats,
    ListenTimeMs,
    SleepTimeMs,
    /// Sets the relay sleep time so the nominal duty cycle hits the value.
    DutyCycle,
    /// Period of every member node.
    NodePeriodMs,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::ScanIntervalMs => "scan_interval_ms",
            SweepParameter::ScanWindowMs => "scan_window_ms",
            SweepParameter::RepeatIntervalMs => "repeat_interval_ms",
            SweepParameter::NrRepeats => "nr_repeats",
            SweepParameter::ListenTimeMs => "listen_time_ms",
            SweepParameter::SleepTimeMs => "sleep_time_ms",
            SweepParameter::DutyCycle => "duty_cycle",
            SweepParameter::NodePeriodMs => "node_period_ms",
        }
    }

    /// Applies `value` to `scenario`; the caller re-validates.
    pub fn apply(self, scenario: &mut Scenario, value: f64) -> Result<(), String> {
        let whole = || -> Result<u64, String> {
            if value >= 0.0 && value.fract() == 0.0 && value.is_finite() {
                Ok(value as u64)
            } else {
                Err(format!("{} needs a non-negative integer, got {value}", self.name()))
            }
        };
        if self == SweepParameter::NodePeriodMs {
            let period = whole()?;
            scenario.nodes.iter_mut().for_each(|n| n.period_ms = period);
            return Ok(());
        }
        let members = scenario.member_count();
        let relay = scenario.relay.as_mut().ok_or_else(|| format!("{} needs a relay", self.name()))?;
        let name = self.name();
        match self {
            SweepParameter::ScanIntervalMs => {
                let v = whole()?;
                // a window that filled the interval keeps filling it
                if relay.scan_window_ms == relay.scan_interval_ms {
                    relay.scan_window_ms = v;
                }
                relay.scan_interval_ms = v;
            }
            SweepParameter::ScanWindowMs => relay.scan_window_ms = whole()?,
            SweepParameter::RepeatIntervalMs => *batching_fields(relay, name)?.2 = whole()?,
            SweepParameter::NrRepeats => {
                *batching_fields(relay, name)?.1 = u32::try_from(whole()?).map_err(|e| e.to_string())?;
            }
            SweepParameter::ListenTimeMs => *batching_fields(relay, name)?.0 = whole()?,
            SweepParameter::SleepTimeMs => relay.sleep_time_ms = whole()?,
            SweepParameter::DutyCycle => {
                if !(value > 0.0 && value <= 1.0) {
                    return Err(format!("duty_cycle must be in (0, 1], got {value}"));
                }
                relay.sleep_time_ms = relay.sleep_for_duty(value, members);
            }
            SweepParameter::NodePeriodMs => unreachable!(),
        }
        Ok(())
    }
}

fn batching_fields<'a>(
    relay: &'a mut RelayConfig,
    param: &str,
) -> Result<(&'a mut u64, &'a mut u32, &'a mut u64), String> {
    match &mut relay.policy {
        ForwardingPolicy::Batching { listen_time_ms, nr_repeats, repeat_interval_ms, .. } => {
            Ok((listen_time_ms, nr_repeats, repeat_interval_ms))
        }
        ForwardingPolicy::Immediate { .. } => Err(format!("{param} needs the batching policy")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: SweepParameter,
    pub values: Vec<f64>,
}

/// Extra CSV columns for relay power estimates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerColumns {
    /// Full-duty rate scaled by the duty cycle into `effective_rate`.
    pub baseline_rate: Option<f64>,
}

/// A base scenario, the axes to vary, and seeds per point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Scenario,
    pub axes: Vec<SweepAxis>,
    /// Runs per point; seeds are `base.seed + 0 .. repetitions`.
    pub repetitions: u32,
    pub power: Option<PowerColumns>,
}

pub const DEFAULT_REPETITIONS: u32 = 3;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDoc {
    base: Option<serde_json::Value>,
    base_file: Option<String>,
    #[serde(default)]
    parameters: Vec<SweepAxis>,
    repetitions: Option<u32>,
    power: Option<PowerColumns>,
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub values: Vec<(SweepParameter, f64)>,
    pub scenario: Scenario,
}

impl SweepSpec {
    pub fn single(base: Scenario) -> Self {
        Self { base, axes: Vec::new(), repetitions: 1, power: None }
    }

    /// Parses a sweep document; `base_file` is resolved against `dir`.
    pub fn parse(doc: &str, dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let d: SweepDoc = from_json(doc)?;
        let base = match (d.base, d.base_file) {
            (Some(v), None) => {
                let scenario = from_value::<ScenarioDoc>(v).map_err(|e| e.prefixed("base"))?.resolve();
                scenario.validate().map_err(|e| e.prefixed("base"))?;
                scenario
            }
            (None, Some(f)) => {
                let path = dir.map_or_else(|| Path::new(&f).to_path_buf(), |d| d.join(&f));
                Scenario::from_file(&path)?
            }
            _ => return Err(invalid("base", "exactly one of `base` or `base_file` is required")),
        };
        let spec = SweepSpec {
            base,
            axes: d.parameters,
            repetitions: d.repetitions.unwrap_or(DEFAULT_REPETITIONS),
            power: d.power,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        Self::parse(&read_file(path)?, path.parent())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "at least one repetition is required"));
        }
        let mut seen = HashSet::new();
        for (i, axis) in self.axes.iter().enumerate() {
            if axis.values.is_empty() {
                return Err(invalid(format!("parameters[{i}].values"), "value list must not be empty"));
            }
            if !seen.insert(axis.name) {
                return Err(invalid(format!("parameters[{i}].name"), "parameter swept twice"));
            }
        }
        self.points().map(|_| ())
    }

    pub fn total_runs(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product::<usize>() * self.repetitions as usize
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..u64::from(self.repetitions)).map(|r| self.base.seed.wrapping_add(r))
    }

    /// Cartesian product of the axes, first axis outermost.
    pub fn points(&self) -> Result<Vec<SweepPoint>, ScenarioError> {
        let mut combos: Vec<Vec<(SweepParameter, f64)>> = vec![Vec::new()];
        for axis in &self.axes {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push((axis.name, *v));
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .enumerate()
            .map(|(index, values)| {
                let mut scenario = self.base.clone();
                // duty cycle depends on the other relay parameters, so it goes last
                let mut ordered = values.clone();
                ordered.sort_by_key(|(p, _)| *p == SweepParameter::DutyCycle);
                for (param, value) in &ordered {
                    param.apply(&mut scenario, *value).map_err(|m| invalid(format!("parameters.{}", param.name()), m))?;
                }
                scenario
                    .validate()
                    .map_err(|e| e.prefixed(&format!("point[{index}]")))?;
                Ok(SweepPoint { index, values, scenario })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "duration_s": 60,
        "nodes": [{"period_ms": 1000}],
        "relay": {"scan_interval_ms": 50},
        "gateway": {}
    }"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.seed, 1);
        assert_eq!(s.nodes.len(), 1);
        assert_eq!(s.nodes[0].id, "node-0");
        assert_eq!(s.nodes[0].airtime_us, 300);
        assert_eq!(s.nodes[0].inter_channel_gap_us, 400);
        assert!(s.nodes[0].adv_delay);
        let r = s.relay.as_ref().unwrap();
        assert_eq!(r.scan_window_ms, 50);
        assert_eq!(r.scan_time_ms, 10_000);
        assert_eq!(r.mode_switch_latency_us, 150);
        assert_eq!(r.duplicate_probability, 0.0);
        assert!(matches!(r.policy, ForwardingPolicy::Immediate { resume: ResumeMode::NextDwell, echo_channels: EchoChannels::First }));
        assert_eq!(s.gateway.scan_interval_ms, 50);
        assert_eq!(s.gateway.scan_window_ms, 50);
        assert_eq!(s.gateway.processing_dead_time_us, 1_000);
        assert_eq!(s.accounting.dedup_horizon_us, 20_000);
        assert_eq!(s.power, PowerModel::default());
    }

    #[test]
    fn window_wider_than_interval_is_rejected() {
        let doc = MINIMAL.replace(r#""scan_interval_ms": 50"#, r#""scan_interval_ms": 50, "scan_window_ms": 60"#);
        let err = parse_scenario(&doc).unwrap_err();
        assert_eq!(err.path(), "relay.scan_window_ms");
        assert!(err.to_string().contains("must not exceed scan_interval"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let doc = MINIMAL.replace(r#""scan_interval_ms": 50"#, r#""scan_interval_ms": 50, "scan_widow_ms": 50"#);
        let err = parse_scenario(&doc).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }));
        assert_eq!(err.path(), "relay.scan_widow_ms");
        assert!(err.to_string().contains("scan_widow_ms"), "{err}");
    }

    #[test]
    fn unknown_policy_keys_are_rejected() {
        let doc = MINIMAL.replace(
            r#""scan_interval_ms": 50"#,
            r#""scan_interval_ms": 50, "policy": {"kind": "batching", "nr_repeats": 5, "repeat_interval_ms": 10, "bogus": 1}"#,
        );
        let err = parse_scenario(&doc).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn missing_required_key() {
        let err = parse_scenario(r#"{"nodes": [], "gateway": {}}"#).unwrap_err();
        assert!(err.to_string().contains("duration_s"), "{err}");
        let err = parse_scenario(r#"{"duration_s": 1, "nodes": [{"id": "a"}], "gateway": {}}"#).unwrap_err();
        assert_eq!(err.path(), "nodes[0]");
        assert!(err.to_string().contains("period_ms"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let doc = r#"{"duration_s": 1, "nodes": [{"id": "x", "period_ms": 100}, {"id": "x", "period_ms": 100}], "gateway": {}}"#;
        assert!(parse_scenario(doc).unwrap_err().to_string().contains("duplicate device id"));
    }

    #[test]
    fn link_pairs_must_name_devices() {
        let doc = MINIMAL.replace(r#""gateway": {}"#, r#""gateway": {}, "links": {"pairs": [{"from": "ghost", "to": "relay", "reach": true}]}"#);
        assert_eq!(parse_scenario(&doc).unwrap_err().path(), "links.pairs[0].from");
        let doc = MINIMAL.replace(r#""gateway": {}"#, r#""gateway": {}, "links": {"pairs": [{"from": "node-0", "to": "gateway", "reach": 1.5}]}"#);
        assert_eq!(parse_scenario(&doc).unwrap_err().path(), "links.pairs[0].reach");
    }

    #[test]
    fn boolean_and_numeric_reach() {
        let doc = MINIMAL.replace(
            r#""gateway": {}"#,
            r#""gateway": {}, "links": {"pairs": [{"from": "node-0", "to": "gateway", "reach": false}, {"from": "relay", "to": "gateway", "reach": 0.5}]}"#,
        );
        let s = parse_scenario(&doc).unwrap();
        assert_eq!(s.links.pairs[0].reach, 0.0);
        assert_eq!(s.links.pairs[1].reach, 0.5);
    }

    #[test]
    fn counted_nodes_expand() {
        let doc = r#"{"duration_s": 1, "nodes": [{"count": 3, "period_ms": 1000}],
                      "noise_nodes": [{"id": "phone", "count": 2, "period_ms": 100}], "gateway": {}}"#;
        let s = parse_scenario(doc).unwrap();
        let names: Vec<_> = s.device_names();
        assert_eq!(names, vec!["node-0", "node-1", "node-2", "phone-0", "phone-1", "gateway"]);
    }

    #[test]
    fn period_must_cover_event() {
        let doc = r#"{"duration_s": 1, "nodes": [{"period_ms": 1}], "gateway": {}}"#;
        assert_eq!(parse_scenario(doc).unwrap_err().path(), "nodes[0].period_ms");
    }

    #[test]
    fn repeat_interval_must_fit_echo() {
        let doc = MINIMAL.replace(
            r#""scan_interval_ms": 50"#,
            r#""scan_interval_ms": 50, "airtime_us": 2000, "policy": {"kind": "batching", "nr_repeats": 5, "repeat_interval_ms": 1}"#,
        );
        assert_eq!(parse_scenario(&doc).unwrap_err().path(), "relay.policy.repeat_interval_ms");
    }

    #[test]
    fn emitted_scenario_parses_back() {
        let doc = r#"{"duration_s": 12.5, "seed": 9, "nodes": [{"count": 2, "period_ms": 1000, "start_offset_us": 5}],
                      "noise_nodes": [{"period_ms": 150, "adv_delay": false}],
                      "relay": {"scan_interval_ms": 50, "sleep_time_ms": 100,
                                "policy": {"kind": "batching", "listen_time_ms": 2000, "nr_repeats": 2, "repeat_interval_ms": 10, "echo_count": "capped"}},
                      "gateway": {"processing_dead_time_us": 0},
                      "links": {"defaults": {"node_to_gateway": 0.1}, "pairs": [{"from": "node-1", "to": "relay", "reach": 0.5}]},
                      "accounting": {"gateway_counting": "unique-origin"},
                      "power": {"sleep_current_ma": 0.002}}"#;
        let s = parse_scenario(doc).unwrap();
        let again = parse_scenario(&s.to_json()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn sweep_expands_cartesian_product() {
        let doc = format!(
            r#"{{"base": {MINIMAL}, "parameters": [
                {{"name": "scan_interval_ms", "values": [50, 200]}},
                {{"name": "sleep_time_ms", "values": [0, 10, 20]}}]}}"#
        );
        let spec = SweepSpec::parse(&doc, None).unwrap();
        assert_eq!(spec.repetitions, 3);
        assert_eq!(spec.total_runs(), 18);
        let pts = spec.points().unwrap();
        assert_eq!(pts.len(), 6);
        let r = pts[3].scenario.relay.as_ref().unwrap();
        assert_eq!((r.scan_interval_ms, r.scan_window_ms, r.sleep_time_ms), (200, 200, 0));
        assert_eq!(spec.seeds().collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn sweep_errors_carry_paths() {
        let doc = format!(r#"{{"base": {MINIMAL}, "parameters": [{{"name": "scan_interval_ms", "values": []}}]}}"#);
        assert_eq!(SweepSpec::parse(&doc, None).unwrap_err().path(), "parameters[0].values");
        let doc = format!(r#"{{"base": {MINIMAL}, "parameters": [{{"name": "nr_repeats", "values": [1]}}]}}"#);
        assert!(SweepSpec::parse(&doc, None).unwrap_err().to_string().contains("batching"));
        let bad_base = MINIMAL.replace("\"gateway\": {}", "\"gateway\": {\"scan_window_ms\": 500}");
        let doc = format!(r#"{{"base": {bad_base}}}"#);
        assert_eq!(SweepSpec::parse(&doc, None).unwrap_err().path(), "base.gateway.scan_window_ms");
        let doc = format!(r#"{{"base": {MINIMAL}, "repetitions": 0}}"#);
        assert_eq!(SweepSpec::parse(&doc, None).unwrap_err().path(), "repetitions");
    }

    #[test]
    fn duty_cycle_axis_sets_sleep() {
        let base = MINIMAL.replace(
            r#""scan_interval_ms": 50"#,
            r#""scan_interval_ms": 50, "mode_switch_latency_us": 0, "policy": {"kind": "batching", "nr_repeats": 5, "repeat_interval_ms": 10}"#,
        );
        let doc = format!(r#"{{"base": {base}, "parameters": [{{"name": "duty_cycle", "values": [1.0, 0.2]}}]}}"#);
        let pts = SweepSpec::parse(&doc, None).unwrap().points().unwrap();
        assert_eq!(pts[0].scenario.relay.as_ref().unwrap().sleep_time_ms, 0);
        // one member: 10 s listen + 5 x 10 ms forwarding
        assert_eq!(pts[1].scenario.relay.as_ref().unwrap().sleep_time_ms, 40_200);
    }
}
