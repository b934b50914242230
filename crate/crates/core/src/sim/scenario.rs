//! Declarative scenario files (TOML).
//!
//! Relative paths inside a scenario (the profile and any playback files)
//! resolve against the directory holding the scenario file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::hw::audio::{AudioError, AudioSource, SourceReader};
use crate::hw::energy::{DrawTable, EnergyState, DEFAULT_CAPACITY_MAH, DEFAULT_MAX_CHARGE_MA, DEFAULT_NOMINAL_VOLTAGE_V, DEFAULT_PANEL_WATTS};
use crate::hw::sd::{CARD_SLOTS, DEFAULT_CARD_BYTES};
use crate::model::{validate_config, DeviceConfig, Timestamp, Violations};
use crate::pipeline::WriterLatencyModel;
use crate::protocol::profile::{Profile, ProfileError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("profile {path}: {source}")]
    Profile {
        path: PathBuf,
        #[source]
        source: ProfileError,
    },
    #[error("invalid config: {0}")]
    Config(Violations),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub start: Timestamp,
    pub duration_s: f64,
    /// Config jumper position at power-on.
    #[serde(default)]
    pub jumper: bool,
    /// Write real WAV files. When off, sizes and drops are still exact.
    #[serde(default = "default_true")]
    pub materialize_audio: bool,
    /// JSON profile to load as the stored configuration.
    #[serde(default)]
    pub profile: Option<PathBuf>,
    /// Inline overrides on top of the default configuration, in profile
    /// field layout. Mutually exclusive with `profile`.
    #[serde(default)]
    pub config: Option<toml::Table>,
    #[serde(default)]
    pub energy: EnergySpec,
    /// Fraction of full sun per hour of day; empty means darkness.
    #[serde(default)]
    pub irradiance: Vec<f64>,
    #[serde(default)]
    pub writer: WriterLatencyModel,
    #[serde(default)]
    pub storage: StorageSpec,
    #[serde(default)]
    pub audio: AudioSource,
    #[serde(default)]
    pub actions: Vec<TimedAction>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySpec {
    pub initial_charge_percent: f64,
    pub capacity_mah: f64,
    pub nominal_voltage_v: f64,
    pub panel_watts: f64,
    pub max_charge_current_ma: f64,
    pub draw_ma: DrawTable,
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self {
            initial_charge_percent: 100.0,
            capacity_mah: DEFAULT_CAPACITY_MAH,
            nominal_voltage_v: DEFAULT_NOMINAL_VOLTAGE_V,
            panel_watts: DEFAULT_PANEL_WATTS,
            max_charge_current_ma: DEFAULT_MAX_CHARGE_MA,
            draw_ma: DrawTable::default(),
        }
    }
}

impl EnergySpec {
    pub fn build(&self) -> EnergyState {
        EnergyState {
            battery_capacity_mah: self.capacity_mah,
            battery_charge_mah: self.capacity_mah * self.initial_charge_percent / 100.0,
            nominal_voltage_v: self.nominal_voltage_v,
            panel_watts: self.panel_watts,
            max_charge_current_ma: self.max_charge_current_ma,
            draw_table: self.draw_ma,
            consumed_mah: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageSpec {
    pub cards: [u64; CARD_SLOTS],
}

impl Default for StorageSpec {
    fn default() -> Self {
        Self {
            cards: [DEFAULT_CARD_BYTES; CARD_SLOTS],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    /// Seconds after scenario start.
    pub at_s: f64,
    #[serde(flatten)]
    pub kind: ActionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionKind {
    /// Raw bytes arriving on the configuration link, hex encoded. Junk and
    /// partial frames are allowed.
    Packet { frame_hex: String },
    /// Supply disconnected for `off_s` seconds, then a fresh boot.
    PowerCut { off_s: f64 },
    /// Arms an EEPROM brown-out: the next configuration write loses power
    /// after `after_bytes` bytes and the device reboots.
    EepromFault { after_bytes: usize },
    /// Moves the config jumper. A running config session that sees the
    /// jumper removed switches to recording mode.
    ModeSwitch { jumper: bool },
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Reads a scenario file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut s = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        s.resolve_paths(base);
        Ok(s)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.profile {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        resolve_audio(&mut self.audio, base);
    }

    pub fn end(&self) -> Timestamp {
        self.start + super::world::delta_s(self.duration_s.max(0.0))
    }

    /// The configuration the device starts with.
    pub fn device_config(&self) -> Result<DeviceConfig, ScenarioError> {
        match (&self.profile, &self.config) {
            (Some(_), Some(_)) => Err(ScenarioError::Invalid(vec![
                "profile and config are mutually exclusive".into(),
            ])),
            (Some(path), None) => {
                let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
                    path: path.clone(),
                    source,
                })?;
                Profile::import(&text)
                    .map(|p| p.config)
                    .map_err(|source| ScenarioError::Profile {
                        path: path.clone(),
                        source,
                    })
            }
            (None, Some(table)) => {
                let mut doc = serde_json::to_value(DeviceConfig::default()).expect("config serializes");
                merge(&mut doc, toml_to_json(&toml::Value::Table(table.clone())));
                let cfg: DeviceConfig =
                    serde_json::from_value(doc).map_err(|e| ScenarioError::Parse(format!("config: {e}")))?;
                validate_config(cfg).map_err(ScenarioError::Config)
            }
            (None, None) => Ok(DeviceConfig::default()),
        }
    }

    /// Checks everything a run depends on and returns the resolved config.
    pub fn validate(&self) -> Result<DeviceConfig, ScenarioError> {
        let mut problems = Vec::new();
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            problems.push(format!("duration_s must be a non-negative number, got {}", self.duration_s));
        }
        if !self.irradiance.is_empty() && self.irradiance.len() != 24 {
            problems.push(format!("irradiance needs 24 hourly values, got {}", self.irradiance.len()));
        }
        if self.irradiance.iter().any(|v| !(0.0..=1.0).contains(v)) {
            problems.push("irradiance values must lie in [0, 1]".into());
        }
        let e = &self.energy;
        if !(0.0..=100.0).contains(&e.initial_charge_percent) {
            problems.push("energy.initial_charge_percent must lie in [0, 100]".into());
        }
        if !(e.capacity_mah > 0.0 && e.nominal_voltage_v > 0.0) {
            problems.push("energy.capacity_mah and energy.nominal_voltage_v must be positive".into());
        }
        if e.panel_watts < 0.0 || e.max_charge_current_ma < 0.0 {
            problems.push("energy.panel_watts and energy.max_charge_current_ma must be non-negative".into());
        }
        if crate::model::DeviceState::ALL.iter().any(|&s| e.draw_ma.get(s) < 0.0) {
            problems.push("energy.draw_ma entries must be non-negative".into());
        }
        if !(self.writer.per_half_write_time_s >= 0.0 && self.writer.jitter_s >= 0.0) {
            problems.push("writer latency and jitter must be non-negative".into());
        }
        for (i, a) in self.actions.iter().enumerate() {
            if !(a.at_s >= 0.0 && a.at_s <= self.duration_s) {
                problems.push(format!("actions[{i}].at_s {} outside [0, duration_s]", a.at_s));
            }
            match &a.kind {
                ActionKind::Packet { frame_hex } => {
                    if let Err(err) = hex::decode(frame_hex.replace(char::is_whitespace, "")) {
                        problems.push(format!("actions[{i}].frame_hex: {err}"));
                    }
                }
                ActionKind::PowerCut { off_s } if !(*off_s >= 0.0) => {
                    problems.push(format!("actions[{i}].off_s must be non-negative"));
                }
                _ => {}
            }
        }
        if self.actions.windows(2).any(|w| w[1].at_s < w[0].at_s) {
            problems.push("actions must be in time order".into());
        }
        if !problems.is_empty() {
            return Err(ScenarioError::Invalid(problems));
        }
        let cfg = self.device_config()?;
        SourceReader::open(&self.audio, cfg.format.sample_rate_hz)?;
        Ok(cfg)
    }

    /// Irradiance fraction in effect at `t`.
    pub fn irradiance_at(&self, t: Timestamp) -> f64 {
        use chrono::Timelike;
        self.irradiance.get(t.hour() as usize).copied().unwrap_or(0.0)
    }
}

fn resolve_audio(src: &mut AudioSource, base: &Path) {
    match src {
        AudioSource::FilePlayback { path } if path.is_relative() => *path = base.join(&*path),
        AudioSource::Mixture { segments, .. } => {
            for s in segments {
                resolve_audio(&mut s.source, base);
            }
        }
        AudioSource::Channels { channels } => {
            for c in channels {
                resolve_audio(c, base);
            }
        }
        _ => {}
    }
}

fn toml_to_json(v: &toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s.clone()),
        toml::Value::Integer(i) => Value::from(*i),
        toml::Value::Float(f) => Value::from(*f),
        toml::Value::Boolean(b) => Value::Bool(*b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(t.iter().map(|(k, v)| (k.clone(), toml_to_json(v))).collect()),
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // A schedule switches variant wholesale.
                    Some(slot) if k != "schedule" => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
