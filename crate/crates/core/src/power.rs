//! Duty-cycle power arithmetic for the relay: average current, battery
//! lifetime and rate scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS_PER_YEAR: f64 = 8760.0;

#[derive(Debug, Error, PartialEq)]
pub enum PowerError {
    #[error("duty cycle {0} outside [0, 1]")]
    DutyOutOfRange(f64),
    #[error("node period must be positive, got {0} s")]
    NonPositivePeriod(f64),
    #[error("active current ({active} mA) must exceed sleep current ({sleep} mA) >= 0")]
    Currents { active: f64, sleep: f64 },
    #[error("battery capacity must be positive, got {0} mAh")]
    Capacity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerModel {
    pub active_current_ma: f64,
    pub sleep_current_ma: f64,
    pub battery_capacity_mah: f64,
}

impl Default for PowerModel {
    /// nRF52 relay on four AA cells.
    fn default() -> Self {
        Self { active_current_ma: 7.5, sleep_current_ma: 0.0, battery_capacity_mah: 12_000.0 }
    }
}

fn check_duty(duty: f64) -> Result<f64, PowerError> {
    if (0.0..=1.0).contains(&duty) {
        Ok(duty)
    } else {
        Err(PowerError::DutyOutOfRange(duty))
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), PowerError> {
        let (active, sleep) = (self.active_current_ma, self.sleep_current_ma);
        if !(sleep >= 0.0 && active > sleep && active.is_finite()) {
            return Err(PowerError::Currents { active, sleep });
        }
        if !(self.battery_capacity_mah > 0.0 && self.battery_capacity_mah.is_finite()) {
            return Err(PowerError::Capacity(self.battery_capacity_mah));
        }
        Ok(())
    }

    pub fn average_current(&self, duty: f64) -> Result<f64, PowerError> {
        let duty = check_duty(duty)?;
        Ok(duty * self.active_current_ma + (1.0 - duty) * self.sleep_current_ma)
    }

    /// Capacity over average current, in years. Zero draw gives `f64::INFINITY`.
    pub fn battery_life_years(&self, duty: f64) -> Result<f64, PowerError> {
        let current = self.average_current(duty)?;
        if current <= 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.battery_capacity_mah / current / HOURS_PER_YEAR)
    }
}

/// Forwarded share once the relay is only up for `duty` of the time.
pub fn effective_rate(baseline: f64, duty: f64) -> Result<f64, PowerError> {
    Ok(baseline * check_duty(duty)?)
}

/// Scales a rate measured at a 1 s node period to another period, holding
/// the forwarded throughput constant. Saturates at 1.
pub fn extrapolate_rate_for_period(baseline: f64, period_s: f64) -> Result<f64, PowerError> {
    if !(period_s > 0.0 && period_s.is_finite()) {
        return Err(PowerError::NonPositivePeriod(period_s));
    }
    Ok((baseline * period_s).min(1.0))
}
