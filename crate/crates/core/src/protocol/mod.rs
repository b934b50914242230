//! Configuration path: framed packets over a byte stream, EEPROM
//! persistence, and JSON profiles.

pub mod apply;
pub mod command;
pub mod crc;
pub mod frame;
pub mod persist;
pub mod profile;

pub use apply::{apply_packet, ApplyOutcome, Effect};
pub use command::{id, Command, NackCode, PayloadError, Response};
pub use crc::crc16_ccitt_false;
pub use frame::{
    decode_packet, encode_packet, ConfigPacket, Decoded, DecoderStats, EncodeError, FrameDecoder, FrameFault,
    StreamEvent, MAX_PAYLOAD, SYNC,
};
pub use persist::{erase_config, load_config, persist_config, PersistError};
pub use profile::{profile_export, profile_import, Profile, ProfileError, SCHEMA_VERSION};
