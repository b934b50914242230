use chrono::TimeDelta;
use thiserror::Error;

use crate::model::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RtcError {
    #[error("alarm {at} is before current time {now}")]
    AlarmInPast { at: Timestamp, now: Timestamp },
}

/// Real-time clock with a single programmable alarm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualRtc {
    now: Timestamp,
    alarm: Option<Timestamp>,
}

impl VirtualRtc {
    pub fn new(now: Timestamp) -> Self {
        Self { now, alarm: None }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn alarm(&self) -> Option<Timestamp> {
        self.alarm
    }

    /// Programs the alarm. Reprogramming replaces any pending alarm.
    pub fn set_alarm(&mut self, at: Timestamp) -> Result<(), RtcError> {
        if at < self.now {
            return Err(RtcError::AlarmInPast { at, now: self.now });
        }
        self.alarm = Some(at);
        Ok(())
    }

    pub fn clear_alarm(&mut self) {
        self.alarm = None;
    }

    /// Operator clock adjustment. The pending alarm is dropped since it was
    /// computed against the old time base.
    pub fn set_time(&mut self, now: Timestamp) {
        self.now = now;
        self.alarm = None;
    }

    /// Moves time forward by `dt` (must be positive). Returns the alarm
    /// instant if it fell inside `(now, now + dt]`, or at `now` itself.
    pub fn advance(&mut self, dt: TimeDelta) -> Option<Timestamp> {
        debug_assert!(dt > TimeDelta::zero());
        let end = self.now + dt;
        self.now = end;
        match self.alarm {
            Some(at) if at <= end => {
                self.alarm = None;
                Some(at)
            }
            _ => None,
        }
    }
}
