//! Wake planning and the device state machine.

pub mod machine;
pub mod plan;

pub use machine::{step, Action, Event, MachineContext, Transition};
pub use plan::{next_alarm, PlanError, next_wake, plan_daily, plan_for, plan_hourly, WakeEntry, WakePlan};
