use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::DeviceState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Boot { jumper: bool },
    ConfigReceived { enter_recording: bool },
    AlarmFired,
    SessionDone,
    BatteryLow,
    BatteryRecovered,
    StorageFull,
    ForcedSleep,
    FactoryReset,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Boot { .. } => "boot",
            Event::ConfigReceived { .. } => "config_received",
            Event::AlarmFired => "alarm_fired",
            Event::SessionDone => "session_done",
            Event::BatteryLow => "battery_low",
            Event::BatteryRecovered => "battery_recovered",
            Event::StorageFull => "storage_full",
            Event::ForcedSleep => "forced_sleep",
            Event::FactoryReset => "factory_reset",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Boot { jumper } => write!(f, "boot(jumper={jumper})"),
            Event::ConfigReceived { enter_recording } => {
                write!(f, "config_received(enter_recording={enter_recording})")
            }
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "detail", rename_all = "snake_case")]
pub enum Action {
    EnterConfigMode,
    ApplyConfig,
    ArmNextAlarm,
    StartSession,
    /// The session was not recorded because the battery is below the floor.
    SkipSession,
    AbortSession,
    FinalizeFiles,
    ResetConfig,
    Log(String),
    Anomaly(String),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Action::EnterConfigMode => "enter_config_mode",
            Action::ApplyConfig => "apply_config",
            Action::ArmNextAlarm => "arm_next_alarm",
            Action::StartSession => "start_session",
            Action::SkipSession => "skip_session",
            Action::AbortSession => "abort_session",
            Action::FinalizeFiles => "finalize_files",
            Action::ResetConfig => "reset_config",
            Action::Log(m) => return write!(f, "log({m})"),
            Action::Anomaly(m) => return write!(f, "anomaly({m})"),
        };
        f.write_str(name)
    }
}

/// Facts the transition function may consult besides state and event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineContext {
    pub charge_percent: f64,
    pub battery_floor_percent: f64,
    pub storage_available: bool,
}

impl MachineContext {
    fn battery_ok(&self) -> bool {
        self.charge_percent >= self.battery_floor_percent
    }

    fn depleted(&self) -> bool {
        self.charge_percent <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: DeviceState,
    pub event: Event,
    pub to: DeviceState,
    pub actions: Vec<Action>,
}

impl Transition {
    pub fn is_anomaly(&self) -> bool {
        self.actions.iter().any(|a| matches!(a, Action::Anomaly(_)))
    }
}

/// Pure transition function. Pairs with no defined behaviour leave the
/// state unchanged and report an anomaly instead of failing.
pub fn step(state: DeviceState, event: Event, ctx: &MachineContext) -> Transition {
    use Action as A;
    use DeviceState as S;

    let (to, actions) = match (state, event) {
        (S::Boot, Event::Boot { jumper: true }) => (S::ConfigMode, vec![A::EnterConfigMode]),
        (S::Boot, Event::Boot { jumper: false }) => {
            if !ctx.storage_available {
                (S::StorageFull, vec![])
            } else if !ctx.battery_ok() {
                (S::LowBattery, vec![A::ArmNextAlarm])
            } else {
                (S::Sleep, vec![A::ArmNextAlarm])
            }
        }

        (S::ConfigMode, Event::ConfigReceived { enter_recording: false }) => (S::ConfigMode, vec![A::ApplyConfig]),
        (S::ConfigMode, Event::ConfigReceived { enter_recording: true }) => {
            (S::Sleep, vec![A::ApplyConfig, A::ArmNextAlarm])
        }

        (S::Sleep | S::LowBattery, Event::AlarmFired) => {
            if !ctx.storage_available {
                (S::StorageFull, vec![])
            } else if !ctx.battery_ok() {
                (
                    S::LowBattery,
                    vec![
                        A::SkipSession,
                        A::Log("battery below floor; session skipped".into()),
                        A::ArmNextAlarm,
                    ],
                )
            } else {
                (S::Recording, vec![A::StartSession])
            }
        }
        (S::StorageFull, Event::AlarmFired) => (S::StorageFull, vec![A::SkipSession]),

        (S::Recording, Event::SessionDone) => (S::Writing, vec![A::FinalizeFiles]),
        (S::Writing, Event::SessionDone) => (S::Sleep, vec![A::ArmNextAlarm]),

        (S::Sleep, Event::BatteryLow) => (S::LowBattery, vec![]),
        (S::LowBattery | S::StorageFull, Event::BatteryLow) => (state, vec![]),
        (S::Recording, Event::BatteryLow) => {
            if ctx.depleted() {
                (
                    S::LowBattery,
                    vec![A::AbortSession, A::FinalizeFiles, A::ArmNextAlarm],
                )
            } else {
                (
                    S::Recording,
                    vec![A::Log("battery below floor; finishing session".into())],
                )
            }
        }
        (S::ConfigMode, Event::BatteryLow) => {
            if ctx.depleted() {
                (S::LowBattery, vec![A::ArmNextAlarm])
            } else {
                (S::ConfigMode, vec![A::Log("battery below floor in config mode".into())])
            }
        }
        (S::LowBattery, Event::BatteryRecovered) => (S::Sleep, vec![]),

        (S::Recording, Event::StorageFull) => (S::StorageFull, vec![A::AbortSession]),
        (_, Event::StorageFull) if state != S::ConfigMode => (S::StorageFull, vec![]),

        (S::Recording, Event::ForcedSleep) => (
            S::Sleep,
            vec![A::AbortSession, A::FinalizeFiles, A::ArmNextAlarm],
        ),
        (S::Boot, Event::ForcedSleep) => (S::Boot, vec![A::Anomaly("forced_sleep before boot".into())]),
        (_, Event::ForcedSleep) => (S::Sleep, vec![A::ArmNextAlarm]),

        (S::Recording, Event::FactoryReset) => (
            S::ConfigMode,
            vec![A::AbortSession, A::ResetConfig, A::EnterConfigMode],
        ),
        (_, Event::FactoryReset) => (S::ConfigMode, vec![A::ResetConfig, A::EnterConfigMode]),

        (s, e) => (s, vec![A::Anomaly(format!("{e} undefined in {s}"))]),
    };
    Transition {
        from: state,
        event,
        to,
        actions,
    }
}
