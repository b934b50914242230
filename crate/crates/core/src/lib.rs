//! Deterministic simulator of a solar-powered autonomous bird-call
//! recording unit.
//!
//! The crate models the whole device: the wake/record/sleep state machine,
//! the double-buffered capture path and its WAV output, the onboard DSP,
//! the configuration wire protocol with EEPROM persistence, and the
//! battery, storage and clock peripherals underneath, all driven by a
//! virtual-time event loop.

pub mod dsp;
pub mod hw;
pub mod model;
pub mod pipeline;
pub mod protocol;
pub mod scheduler;
pub mod sim;

pub use model::{
    bytes_per_second, capacity_files, session_file_bytes, validate_config, AudioFormat,
    BandpassSettings, DeviceConfig, DeviceState, GainSettings, GateMetric, Schedule,
    SilenceGateSettings, Timestamp, Violation, Violations,
};
