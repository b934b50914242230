use chrono::{Days, NaiveDate, NaiveTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Schedule, Timestamp, DAILY_SESSION_MINUTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WakeEntry {
    pub wake_at: Timestamp,
    pub duration_s: u64,
}

impl WakeEntry {
    pub fn end(&self) -> Timestamp {
        self.wake_at + TimeDelta::seconds(self.duration_s as i64)
    }
}

/// Sessions planned for one calendar day, in start order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WakePlan {
    pub date: NaiveDate,
    pub entries: Vec<WakeEntry>,
}

impl WakePlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total planned recording time in seconds.
    pub fn recording_seconds(&self) -> u64 {
        self.entries.iter().map(|e| e.duration_s).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("sunrise {sunrise} is not before sunset {sunset}")]
    EmptyWindow { sunrise: NaiveTime, sunset: NaiveTime },
}

/// One session at every whole hour from sunrise through sunset, both ends
/// included when they fall on the hour.
pub fn plan_daily(date: NaiveDate, sunrise: NaiveTime, sunset: NaiveTime) -> Result<WakePlan, PlanError> {
    if sunrise >= sunset {
        return Err(PlanError::EmptyWindow { sunrise, sunset });
    }
    let first = if sunrise.minute() == 0 && sunrise.second() == 0 {
        sunrise.hour()
    } else {
        sunrise.hour() + 1
    };
    let duration_s = u64::from(DAILY_SESSION_MINUTES) * 60;
    let entries = (first..=sunset.hour())
        .map(|h| WakeEntry {
            wake_at: date.and_hms_opt(h, 0, 0).expect("valid hour"),
            duration_s,
        })
        .collect();
    Ok(WakePlan { date, entries })
}

pub fn plan_hourly(date: NaiveDate, wake_times: &[NaiveTime], session_minutes: u32) -> WakePlan {
    let mut times = wake_times.to_vec();
    times.sort();
    times.dedup();
    WakePlan {
        date,
        entries: times
            .into_iter()
            .map(|t| WakeEntry {
                wake_at: date.and_time(t),
                duration_s: u64::from(session_minutes) * 60,
            })
            .collect(),
    }
}

pub fn plan_for(schedule: &Schedule, date: NaiveDate) -> Result<WakePlan, PlanError> {
    match schedule {
        Schedule::Daily { sunrise, sunset } => plan_daily(date, *sunrise, *sunset),
        Schedule::Hourly {
            wake_times,
            session_minutes,
        } => Ok(plan_hourly(date, wake_times, *session_minutes)),
    }
}

/// First entry of `plan` that starts strictly after `now`.
pub fn next_alarm(plan: &WakePlan, now: Timestamp) -> Option<WakeEntry> {
    plan.entries.iter().find(|e| e.wake_at > now).copied()
}

/// Next session under `schedule` after `now`, looking into tomorrow when
/// today's plan is exhausted. `None` only for a schedule with no sessions.
pub fn next_wake(schedule: &Schedule, now: Timestamp) -> Option<WakeEntry> {
    let today = now.date();
    next_alarm(&plan_for(schedule, today).ok()?, now).or_else(|| {
        let tomorrow = today.checked_add_days(Days::new(1))?;
        plan_for(schedule, tomorrow).ok()?.entries.first().copied()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d() -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, 6, 1).unwrap()
    }

    fn t(h: u32, m: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(h, m, 0).unwrap()
    }

    #[test]
    fn daily_six_to_six_has_thirteen() {
        let p = plan_daily(d(), t(6, 0), t(18, 0)).unwrap();
        assert_eq!(p.len(), 13);
        assert_eq!(p.entries[0].wake_at, d().and_hms_opt(6, 0, 0).unwrap());
        assert_eq!(p.entries[12].wake_at, d().and_hms_opt(18, 0, 0).unwrap());
        assert!(p.entries.iter().all(|e| e.duration_s == 600));
        assert_eq!(p.recording_seconds(), 7800);
    }

    #[test]
    fn daily_rounds_sunrise_up_and_sunset_down() {
        let p = plan_daily(d(), t(5, 42), t(19, 17)).unwrap();
        assert_eq!(p.entries.first().unwrap().wake_at.hour(), 6);
        assert_eq!(p.entries.last().unwrap().wake_at.hour(), 19);
        assert_eq!(p.len(), 14);
        assert!(plan_daily(d(), t(10, 30), t(10, 45)).unwrap().is_empty());
        let p = plan_daily(d(), t(6, 30), t(7, 10)).unwrap();
        assert_eq!(p.entries.iter().map(|e| e.wake_at.hour()).collect::<Vec<_>>(), vec![7]);
        assert!(plan_daily(d(), t(6, 0), t(6, 0)).is_err());
    }

    #[test]
    fn hourly_direct_mapping() {
        let p = plan_hourly(d(), &[t(5, 30), t(12, 0), t(19, 45)], 15);
        assert_eq!(p.len(), 3);
        assert!(p.entries.iter().all(|e| e.duration_s == 900));
    }

    #[test]
    fn hourly_plan_sorted() {
        let p = plan_hourly(d(), &[t(20, 0), t(5, 0)], 15);
        assert_eq!(p.entries[0].wake_at.hour(), 5);
        assert_eq!(p.entries[1].end(), d().and_hms_opt(20, 15, 0).unwrap());
    }

    #[test]
    fn next_alarm_is_strictly_later() {
        let p = plan_daily(d(), t(6, 0), t(18, 0)).unwrap();
        let at_six = d().and_hms_opt(6, 0, 0).unwrap();
        assert_eq!(next_alarm(&p, at_six).unwrap().wake_at.hour(), 7);
        let before = d().and_hms_opt(5, 59, 59).unwrap();
        assert_eq!(next_alarm(&p, before).unwrap().wake_at, at_six);
        assert!(next_alarm(&p, d().and_hms_opt(18, 0, 1).unwrap()).is_none());
        assert_eq!(next_alarm(&p, d().and_hms_opt(6, 5, 0).unwrap()).unwrap().wake_at.hour(), 7);
    }

    #[test]
    fn next_wake_rolls_to_tomorrow() {
        let s = Schedule::default();
        let late = d().and_hms_opt(18, 30, 0).unwrap();
        let w = next_wake(&s, late).unwrap();
        assert_eq!(w.wake_at, NaiveDate::from_ymd_opt(2025, 6, 2).unwrap().and_hms_opt(6, 0, 0).unwrap());
    }

    proptest! {
        #[test]
        fn daily_count_matches_hour_arithmetic(a in 0u32..86_400, b in 0u32..86_400) {
            prop_assume!(a != b);
            let (lo, hi) = (a.min(b), a.max(b));
            let sr = NaiveTime::from_num_seconds_from_midnight_opt(lo, 0).unwrap();
            let ss = NaiveTime::from_num_seconds_from_midnight_opt(hi, 0).unwrap();
            let p = plan_daily(d(), sr, ss).unwrap();
            let expected = (0..24u32).filter(|h| h * 3600 >= lo && h * 3600 <= hi).count();
            prop_assert_eq!(p.len(), expected);
            prop_assert!(p.entries.windows(2).all(|w| w[0].end() <= w[1].wake_at));
        }

        #[test]
        fn next_wake_is_after_now(secs in 0u32..86_400, day in 0u64..365) {
            let now = d().checked_add_days(Days::new(day)).unwrap()
                .and_time(NaiveTime::from_num_seconds_from_midnight_opt(secs, 0).unwrap());
            let w = next_wake(&Schedule::default(), now).unwrap();
            prop_assert!(w.wake_at > now);
            prop_assert!(w.wake_at - now <= TimeDelta::hours(13));
        }
    }
}
