//! Battery charge bookkeeping and the solar charger model.
//!
//! Charge is tracked in mAh at a fixed nominal pack voltage. Within one
//! integration step the load draw and irradiance are constant, which makes
//! the charge trajectory piecewise closed-form:
//!
//! * net current `cc - draw <= 0`: linear discharge, clamped at empty;
//! * net current positive: linear charge at `cc - draw` until the taper
//!   limit `cc * (cap - q) / (0.05 cap)` becomes the binding constraint,
//!   then an exponential approach to full capacity.
//!
//! Threshold crossings are solved exactly on that trajectory so events
//! carry their true timestamp rather than the step boundary.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::DeviceState;

/// State of charge above which the constant-voltage taper applies.
pub const TAPER_START_FRACTION: f64 = 0.95;
/// Charge termination point: taper current down to a tenth of the CC setting.
pub const TERMINATION_FRACTION: f64 = 0.995;

pub const DEFAULT_CAPACITY_MAH: f64 = 10_400.0;
pub const DEFAULT_NOMINAL_VOLTAGE_V: f64 = 7.2;
pub const DEFAULT_PANEL_WATTS: f64 = 10.0;
pub const DEFAULT_MAX_CHARGE_MA: f64 = 2_000.0;
/// Measured supply current while recording.
pub const RECORDING_DRAW_MA: f64 = 200.0;
/// Measured supply current in every non-recording state.
pub const IDLE_DRAW_MA: f64 = 179.0;

/// Supply current per device state. Complete by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawTable {
    ma: [f64; DeviceState::ALL.len()],
}

impl DrawTable {
    /// `recording_ma` while recording, `idle_ma` everywhere else.
    pub fn split(idle_ma: f64, recording_ma: f64) -> Self {
        let mut ma = [idle_ma; DeviceState::ALL.len()];
        ma[DeviceState::Recording.index()] = recording_ma;
        Self { ma }
    }

    pub fn get(&self, state: DeviceState) -> f64 {
        self.ma[state.index()]
    }

    pub fn set(&mut self, state: DeviceState, ma: f64) {
        self.ma[state.index()] = ma;
    }
}

impl Default for DrawTable {
    fn default() -> Self {
        Self::split(IDLE_DRAW_MA, RECORDING_DRAW_MA)
    }
}

impl Serialize for DrawTable {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<DeviceState, f64> =
            DeviceState::ALL.iter().map(|&st| (st, self.get(st))).collect();
        map.serialize(s)
    }
}

/// Missing states keep their default draw.
impl<'de> Deserialize<'de> for DrawTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<DeviceState, f64>::deserialize(d)?;
        let mut table = DrawTable::default();
        for (st, ma) in map {
            table.set(st, ma);
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Falling,
    Rising,
}

/// A charge level reached partway through an integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// Index into the `levels` slice passed to [`EnergyState::integrate`].
    pub level_index: usize,
    pub level_mah: f64,
    pub direction: Direction,
    pub after_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub battery_capacity_mah: f64,
    pub battery_charge_mah: f64,
    pub nominal_voltage_v: f64,
    pub panel_watts: f64,
    pub max_charge_current_ma: f64,
    pub draw_table: DrawTable,
    /// Load charge actually delivered to the device so far.
    #[serde(default)]
    pub consumed_mah: f64,
}

impl Default for EnergyState {
    fn default() -> Self {
        Self {
            battery_capacity_mah: DEFAULT_CAPACITY_MAH,
            battery_charge_mah: DEFAULT_CAPACITY_MAH,
            nominal_voltage_v: DEFAULT_NOMINAL_VOLTAGE_V,
            panel_watts: DEFAULT_PANEL_WATTS,
            max_charge_current_ma: DEFAULT_MAX_CHARGE_MA,
            draw_table: DrawTable::default(),
            consumed_mah: 0.0,
        }
    }
}

impl EnergyState {
    pub fn state_of_charge(&self) -> f64 {
        self.battery_charge_mah / self.battery_capacity_mah
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.state_of_charge()
    }

    /// Constant-current setting the panel can sustain at this irradiance.
    pub fn cc_current_ma(&self, irradiance_fraction: f64) -> f64 {
        let irr = irradiance_fraction.clamp(0.0, 1.0);
        (self.panel_watts * irr / self.nominal_voltage_v * 1000.0).min(self.max_charge_current_ma)
    }

    /// Charger output at the current state of charge, including the linear
    /// taper over the top 5 %.
    pub fn solar_charge_current(&self, irradiance_fraction: f64) -> f64 {
        self.cc_current_ma(irradiance_fraction) * taper(self.state_of_charge())
    }

    fn trajectory(&self, draw_ma: f64, irradiance_fraction: f64) -> Trajectory {
        Trajectory::new(
            self.battery_charge_mah,
            self.battery_capacity_mah,
            self.cc_current_ma(irradiance_fraction),
            draw_ma,
        )
    }

    /// Advances the battery by `dt_s` seconds. Stops early at the first
    /// charge level in `levels` (mAh) the trajectory reaches, landing the
    /// charge exactly on it.
    pub fn integrate(
        &mut self,
        dt_s: f64,
        draw_ma: f64,
        irradiance_fraction: f64,
        levels: &[f64],
    ) -> Option<Crossing> {
        let traj = self.trajectory(draw_ma, irradiance_fraction);
        let dt_h = dt_s / 3600.0;
        let mut first: Option<(f64, usize)> = None;
        for (i, &level) in levels.iter().enumerate() {
            if let Some(t) = traj.time_to_reach(level) {
                if t <= dt_h && first.is_none_or(|(best, _)| t < best) {
                    first = Some((t, i));
                }
            }
        }
        match first {
            Some((t, i)) => {
                let level = levels[i];
                let direction = if level < self.battery_charge_mah {
                    Direction::Falling
                } else {
                    Direction::Rising
                };
                self.consumed_mah += traj.delivered(t);
                self.battery_charge_mah = level;
                Some(Crossing {
                    level_index: i,
                    level_mah: level,
                    direction,
                    after_s: t * 3600.0,
                })
            }
            None => {
                self.consumed_mah += traj.delivered(dt_h);
                self.battery_charge_mah = traj.charge_at(dt_h);
                None
            }
        }
    }
}

fn taper(soc: f64) -> f64 {
    if soc <= TAPER_START_FRACTION {
        1.0
    } else {
        ((1.0 - soc) / (1.0 - TAPER_START_FRACTION)).clamp(0.0, 1.0)
    }
}

/// Closed-form charge trajectory for constant draw and charger current.
/// Times are in hours.
#[derive(Debug, Clone, Copy)]
struct Trajectory {
    q0: f64,
    cap: f64,
    cc: f64,
    draw: f64,
}

impl Trajectory {
    fn new(q0: f64, cap: f64, cc: f64, draw: f64) -> Self {
        Self { q0, cap, cc, draw }
    }

    fn net(&self) -> f64 {
        self.cc - self.draw
    }

    // Charge above which the taper limit binds; only meaningful when net > 0.
    fn taper_knee(&self) -> f64 {
        self.cap - (1.0 - TAPER_START_FRACTION) * self.cap * self.net() / self.cc
    }

    // Exponential rate of the taper region, 1/h.
    fn taper_rate(&self) -> f64 {
        self.cc / ((1.0 - TAPER_START_FRACTION) * self.cap)
    }

    fn charge_at(&self, t: f64) -> f64 {
        let r = self.net();
        if r <= 0.0 {
            return (self.q0 + r * t).max(0.0);
        }
        if self.q0 >= self.cap {
            return self.cap;
        }
        let knee = self.taper_knee();
        let (t_start, q_start) = if self.q0 < knee {
            let t_knee = (knee - self.q0) / r;
            if t <= t_knee {
                return self.q0 + r * t;
            }
            (t_knee, knee)
        } else {
            (0.0, self.q0)
        };
        let q = self.cap - (self.cap - q_start) * (-self.taper_rate() * (t - t_start)).exp();
        q.min(self.cap)
    }

    fn time_to_reach(&self, level: f64) -> Option<f64> {
        let r = self.net();
        if r <= 0.0 {
            if r < 0.0 && level < self.q0 && level >= 0.0 {
                return Some((self.q0 - level) / -r);
            }
            return None;
        }
        if level <= self.q0 || level >= self.cap {
            return None;
        }
        let knee = self.taper_knee();
        if self.q0 < knee && level <= knee {
            return Some((level - self.q0) / r);
        }
        let (t_start, q_start) = if self.q0 < knee {
            ((knee - self.q0) / r, knee)
        } else {
            (0.0, self.q0)
        };
        Some(t_start + ((self.cap - q_start) / (self.cap - level)).ln() / self.taper_rate())
    }

    /// Load charge served over `[0, t]`. Nothing is delivered once an empty
    /// battery can no longer cover the draw.
    fn delivered(&self, t: f64) -> f64 {
        let r = self.net();
        if r >= 0.0 {
            return self.draw * t;
        }
        let alive = if self.q0 <= 0.0 { 0.0 } else { (self.q0 / -r).min(t) };
        self.draw * alive
    }
}
