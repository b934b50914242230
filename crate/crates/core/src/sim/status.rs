use serde::{Deserialize, Serialize};

use super::ledger::SessionRecord;
use crate::model::{DeviceConfig, DeviceState, Timestamp};

/// Point-in-time view of the device, taken at an event boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub sim_time: Timestamp,
    pub elapsed_s: f64,
    pub rtc_time: Timestamp,
    pub state: DeviceState,
    pub powered: bool,
    pub battery: BatteryStatus,
    pub storage: StorageStatus,
    pub next_alarm: Option<Timestamp>,
    pub next_alarm_in_s: Option<f64>,
    pub config: DeviceConfig,
    pub last_session: Option<SessionRecord>,
    pub sessions_recorded: u64,
    pub sessions_skipped: u64,
    pub anomalies: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryStatus {
    pub charge_percent: f64,
    pub charge_mah: f64,
    pub capacity_mah: f64,
    pub consumed_mah: f64,
    pub solar_ma: f64,
    pub draw_ma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageStatus {
    pub active_card: usize,
    pub total_bytes: u64,
    pub used_bytes: u64,
    pub free_bytes: u64,
    pub cards: Vec<CardStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardStatus {
    pub index: usize,
    pub capacity_bytes: u64,
    pub used_bytes: u64,
    pub free_bytes: u64,
    pub files: usize,
}

impl StatusSnapshot {
    /// Short form carried in a status response frame, which must stay well
    /// under the frame payload limit regardless of schedule length.
    pub fn compact_json(&self) -> String {
        serde_json::json!({
            "state": self.state,
            "charge_percent": (self.battery.charge_percent * 10.0).round() / 10.0,
            "rtc_time": self.rtc_time,
            "next_alarm": self.next_alarm,
            "active_card": self.storage.active_card,
            "card_free_bytes": self.storage.cards.iter().map(|c| c.free_bytes).collect::<Vec<_>>(),
            "sessions_recorded": self.sessions_recorded,
            "last_session": self.last_session.as_ref().map(|s| s.start),
        })
        .to_string()
    }
}
