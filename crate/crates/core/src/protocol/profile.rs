//! Shareable JSON profiles: every [`DeviceConfig`] field at top level,
//! plus `schema_version` and `profile_name`. Unknown top-level keys are
//! kept and written back out on export.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{validate_config, DeviceConfig, Violations};

pub const SCHEMA_VERSION: u64 = 1;
const CONFIG_KEYS: [&str; 7] = [
    "format",
    "gains",
    "schedule",
    "silence_gate",
    "bandpass",
    "battery_floor_percent",
    "rtc_time",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("malformed profile: {0}")]
    Malformed(String),
    #[error("unsupported schema_version {0} (supported: {SCHEMA_VERSION})")]
    UnsupportedSchema(u64),
    #[error("invalid profile: {0}")]
    Invalid(Violations),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub name: String,
    pub config: DeviceConfig,
    /// Top-level keys this version does not know, in document order.
    pub extra: Map<String, Value>,
}

impl Profile {
    pub fn new(name: impl Into<String>, config: DeviceConfig) -> Self {
        Self {
            name: name.into(),
            config,
            extra: Map::new(),
        }
    }

    pub fn to_value(&self) -> Value {
        let mut doc = Map::new();
        doc.insert("schema_version".into(), SCHEMA_VERSION.into());
        doc.insert("profile_name".into(), self.name.clone().into());
        let Value::Object(cfg) = serde_json::to_value(&self.config).expect("config serializes") else {
            unreachable!("config is a struct")
        };
        doc.extend(cfg);
        for (k, v) in &self.extra {
            doc.insert(k.clone(), v.clone());
        }
        Value::Object(doc)
    }

    pub fn export(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn import(text: &str) -> Result<Profile, ProfileError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ProfileError::Malformed(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Profile, ProfileError> {
        let Value::Object(mut doc) = value else {
            return Err(ProfileError::Malformed("top level must be an object".into()));
        };
        let version = doc
            .remove("schema_version")
            .ok_or_else(|| ProfileError::Malformed("missing schema_version".into()))?;
        let version = version
            .as_u64()
            .ok_or_else(|| ProfileError::Malformed(format!("schema_version must be an integer, got {version}")))?;
        if version != SCHEMA_VERSION {
            return Err(ProfileError::UnsupportedSchema(version));
        }
        let name = match doc.remove("profile_name") {
            Some(Value::String(s)) => s,
            Some(other) => {
                return Err(ProfileError::Malformed(format!(
                    "profile_name must be a string, got {other}"
                )))
            }
            None => String::new(),
        };
        let mut cfg_doc = Map::new();
        for key in CONFIG_KEYS {
            if let Some(v) = doc.remove(key) {
                cfg_doc.insert(key.into(), v);
            }
        }
        let config: DeviceConfig =
            serde_json::from_value(Value::Object(cfg_doc)).map_err(|e| ProfileError::Malformed(e.to_string()))?;
        let config = validate_config(config).map_err(ProfileError::Invalid)?;
        Ok(Profile {
            name,
            config,
            extra: doc,
        })
    }
}

pub fn profile_export(cfg: &DeviceConfig, name: &str) -> String {
    Profile::new(name, cfg.clone()).export()
}

pub fn profile_import(text: &str) -> Result<DeviceConfig, ProfileError> {
    Profile::import(text).map(|p| p.config)
}
