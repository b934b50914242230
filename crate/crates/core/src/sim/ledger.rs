//! Run ledger: one structured record per event, in virtual-time order.

use serde::{Deserialize, Serialize};

use crate::hw::energy::Direction;
use crate::model::{DeviceState, Timestamp};
use crate::pipeline::KeptRegion;
use crate::protocol::{FrameFault, Response};
use crate::scheduler::Transition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    /// Virtual time since scenario start, seconds.
    pub t_s: f64,
    #[serde(flatten)]
    pub entry: LedgerEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerEntry {
    Transition {
        at: Timestamp,
        from: DeviceState,
        event: String,
        to: DeviceState,
        actions: Vec<String>,
    },
    Session(SessionRecord),
    SessionSkipped {
        wake_at: Option<Timestamp>,
        reason: String,
    },
    Energy {
        state: DeviceState,
        charge_mah: f64,
        percent: f64,
        consumed_mah: f64,
        solar_ma: f64,
    },
    Storage {
        used_bytes: u64,
        free_bytes: u64,
        active_card: usize,
        card_used_bytes: Vec<u64>,
    },
    Battery {
        level: BatteryLevel,
        direction: Direction,
    },
    Packet {
        id: u8,
        response: Response,
    },
    FrameFault {
        offset: u64,
        fault: FrameFault,
    },
    PowerCut {
        off_s: f64,
    },
    Log {
        message: String,
    },
    Anomaly {
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryLevel {
    Floor,
    Empty,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub start: Timestamp,
    pub planned_s: f64,
    pub duration_s: f64,
    /// Why the session ended early, if it did.
    pub aborted: Option<String>,
    /// False when the files could not be placed on any card.
    pub stored: bool,
    pub dropped_halves: u64,
    pub energy_mah: f64,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub size_bytes: u64,
    pub data_bytes: u64,
    pub dropped_halves: u64,
    pub card: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept_regions: Option<Vec<KeptRegion>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub records: Vec<LedgerRecord>,
}

impl RunLedger {
    pub fn push(&mut self, t_s: f64, entry: LedgerEntry) {
        self.records.push(LedgerRecord { t_s, entry });
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<RunLedger, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(RunLedger { records })
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionRecord> {
        self.records.iter().filter_map(|r| match &r.entry {
            LedgerEntry::Session(s) => Some(s),
            _ => None,
        })
    }

    pub fn transitions(&self) -> impl Iterator<Item = (&LedgerRecord, DeviceState, DeviceState)> {
        self.records.iter().filter_map(|r| match &r.entry {
            LedgerEntry::Transition { from, to, .. } => Some((r, *from, *to)),
            _ => None,
        })
    }

    pub fn anomalies(&self) -> impl Iterator<Item = &str> {
        self.records.iter().filter_map(|r| match &r.entry {
            LedgerEntry::Anomaly { message } => Some(message.as_str()),
            _ => None,
        })
    }

    /// `ts | from | event | to | actions`, one line per transition.
    pub fn transitions_log(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            if let LedgerEntry::Transition {
                at,
                from,
                event,
                to,
                actions,
            } = &r.entry
            {
                out.push_str(&format!(
                    "{} | {} | {} | {} | {}\n",
                    at.format("%Y-%m-%dT%H:%M:%S%.3f"),
                    from,
                    event,
                    to,
                    actions.join(", ")
                ));
            }
        }
        out
    }

    /// One line per kept region of every gated file.
    pub fn gate_sidecar(&self) -> String {
        let mut out = String::new();
        for s in self.sessions() {
            for f in &s.files {
                for r in f.kept_regions.iter().flatten() {
                    out.push_str(&format!("{}\t{:.6}\t{:.6}\n", f.name, r.start_s, r.end_s));
                }
            }
        }
        out
    }
}

pub(crate) fn transition_entry(at: Timestamp, t: &Transition) -> LedgerEntry {
    LedgerEntry::Transition {
        at,
        from: t.from,
        event: t.event.to_string(),
        to: t.to,
        actions: t.actions.iter().map(ToString::to_string).collect(),
    }
}
