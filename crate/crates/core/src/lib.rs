//! Discrete-event simulator for a one-way BLE advertising network: battery
//! nodes advertise, a duty-cycled relay captures and echoes member packets,
//! and a gateway collects whatever reaches it.

pub mod audit;
pub mod devices;
pub mod engine;
pub mod metrics;
pub mod power;
pub mod presets;
pub mod radio;
pub mod scenario;
pub mod sim;
pub mod sweep;

pub use engine::{DeviceId, SimTime};
pub use metrics::{listen_ratio, RateReport};
pub use power::{effective_rate, extrapolate_rate_for_period, PowerModel};
pub use scenario::{parse_scenario, Scenario, SweepSpec};
pub use sim::{run_scenario, RunOptions, RunOutcome};
pub use sweep::{emit_summary, run_sweep, SweepOutcome};
