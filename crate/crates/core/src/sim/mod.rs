//! Scenario runner: the device under a scripted environment, advanced in
//! virtual time.

pub mod ledger;
pub mod scenario;
pub mod status;
pub mod world;

pub use ledger::{BatteryLevel, FileRecord, LedgerEntry, LedgerRecord, RunLedger, SessionRecord};
pub use scenario::{ActionKind, EnergySpec, Scenario, ScenarioError, StorageSpec, TimedAction};
pub use status::{BatteryStatus, CardStatus, StatusSnapshot, StorageStatus};
pub use world::{
    run_scenario, World, GATE_SIDECAR_FILE, LEDGER_FILE, SESSIONS_DIR, TRANSITIONS_FILE,
};
