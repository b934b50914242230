use serde::{Deserialize, Serialize};

use super::command::{Command, NackCode, PayloadError, Response};
use super::frame::ConfigPacket;
use super::persist::{erase_config, persist_config};
use super::profile::{Profile, ProfileError};
use crate::hw::eeprom::VirtualEeprom;
use crate::model::{validate_config, DeviceConfig, DeviceState, Timestamp};

/// What the rest of the device must do after a packet was accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    ConfigApplied,
    RtcSet { at: Timestamp },
    ForcedSleep,
    FactoryReset,
    StatusQueried,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApplyOutcome {
    pub response: Response,
    pub effect: Option<Effect>,
}

impl ApplyOutcome {
    fn ack(id: u8, effect: Effect) -> Self {
        Self {
            response: Response::Ack { request_id: id },
            effect: Some(effect),
        }
    }

    fn nack(id: u8, code: NackCode, message: impl Into<String>) -> Self {
        Self {
            response: Response::nack(id, code, message),
            effect: None,
        }
    }
}

/// Handles one inbound packet. Configuration packets are only accepted in
/// config mode, are validated as a whole config, and are persisted before
/// the ack; any failure leaves `config` and the EEPROM image untouched.
pub fn apply_packet(
    config: &mut DeviceConfig,
    eeprom: &mut VirtualEeprom,
    state: DeviceState,
    packet: &ConfigPacket,
    status_json: impl FnOnce(&DeviceConfig) -> String,
) -> ApplyOutcome {
    let id = packet.id;
    let cmd = match Command::parse(packet) {
        Ok(c) => c,
        Err(e @ PayloadError::UnknownId(_)) => return ApplyOutcome::nack(id, NackCode::UnknownId, e.to_string()),
        Err(e) => return ApplyOutcome::nack(id, NackCode::Malformed, e.to_string()),
    };

    match cmd {
        Command::QueryStatus => {
            return ApplyOutcome {
                response: Response::Status {
                    json: status_json(config),
                },
                effect: Some(Effect::StatusQueried),
            }
        }
        Command::ForcedSleep => return ApplyOutcome::ack(id, Effect::ForcedSleep),
        Command::FactoryReset => {
            if matches!(state, DeviceState::Recording | DeviceState::Writing) {
                return wrong_mode(id, &cmd, state);
            }
            let defaults = DeviceConfig::default();
            let mut scratch = eeprom.clone();
            let res = erase_config(&mut scratch).and_then(|_| persist_config(&mut scratch, &defaults));
            // The erase is a multi-step operation; on failure keep whatever
            // the cells hold now, since that is what hardware would have.
            *eeprom = scratch;
            if let Err(e) = res {
                return ApplyOutcome::nack(id, NackCode::Storage, e.to_string());
            }
            *config = defaults;
            return ApplyOutcome::ack(id, Effect::FactoryReset);
        }
        _ => {}
    }

    if state != DeviceState::ConfigMode {
        return wrong_mode(id, &cmd, state);
    }

    let candidate = match &cmd {
        Command::SetFullProfile(text) => match Profile::import(text) {
            Ok(p) => DeviceConfig {
                rtc_time: config.rtc_time,
                ..p.config
            },
            Err(ProfileError::Invalid(v)) => return ApplyOutcome::nack(id, NackCode::Validation, v.to_string()),
            Err(e) => return ApplyOutcome::nack(id, NackCode::Malformed, e.to_string()),
        },
        other => other.apply_to(config).expect("config-carrying command"),
    };
    let candidate = match validate_config(candidate) {
        Ok(c) => c,
        Err(v) => return ApplyOutcome::nack(id, NackCode::Validation, v.to_string()),
    };
    if let Err(e) = persist_config(eeprom, &candidate) {
        return ApplyOutcome::nack(id, NackCode::Storage, e.to_string());
    }
    *config = candidate;
    match cmd {
        Command::SetRtcTime(at) => ApplyOutcome::ack(id, Effect::RtcSet { at }),
        _ => ApplyOutcome::ack(id, Effect::ConfigApplied),
    }
}

fn wrong_mode(id: u8, cmd: &Command, state: DeviceState) -> ApplyOutcome {
    ApplyOutcome::nack(
        id,
        NackCode::WrongMode,
        format!("{} not accepted in {state}", cmd.name()),
    )
}
