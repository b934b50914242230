//! Power-cut-safe configuration storage in two alternating EEPROM slots.
//!
//! Slot layout: `commit (1) ‖ magic "ARUC" ‖ version (1) ‖ seq (u32) ‖
//! len (u16) ‖ payload ‖ crc (u16)`, the CRC covering magic through payload.
//! A slot counts only when its commit byte is [`COMMITTED`].

use thiserror::Error;

use super::command::{
    from_unix_seconds, read_dsp, read_schedule, unix_seconds, write_dsp, write_schedule, PayloadError, Reader,
    Writer,
};
use super::crc::crc16_ccitt_false;
use crate::hw::eeprom::{EepromError, VirtualEeprom};
use crate::model::{AudioFormat, DeviceConfig, GainSettings};

pub const SLOT_ADDRS: [usize; 2] = [0x0000, 0x0800];
pub const SLOT_BYTES: usize = 0x0800;
pub const MAGIC: [u8; 4] = *b"ARUC";
pub const IMAGE_VERSION: u8 = 1;
pub const COMMITTED: u8 = 0xA5;
const UNCOMMITTED: u8 = 0x00;
const BODY_HEADER: usize = 4 + 1 + 4 + 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PersistError {
    #[error("configuration image of {0} bytes does not fit a slot")]
    TooLarge(usize),
    #[error(transparent)]
    Eeprom(#[from] EepromError),
}

pub fn encode_config(cfg: &DeviceConfig) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(cfg.format.sample_rate_hz)
        .u16(cfg.format.bit_depth)
        .u16(cfg.format.channels_per_file)
        .f64(cfg.gains.pga_gain_db)
        .f64(cfg.gains.preamp_gain_db);
    write_schedule(&mut w, &cfg.schedule);
    write_dsp(&mut w, &cfg.silence_gate, &cfg.bandpass);
    w.f64(cfg.battery_floor_percent).i64(unix_seconds(cfg.rtc_time));
    w.0
}

pub fn decode_config(bytes: &[u8]) -> Result<DeviceConfig, PayloadError> {
    let mut r = Reader::new(bytes);
    let format = AudioFormat {
        sample_rate_hz: r.u32()?,
        bit_depth: r.u16()?,
        channels_per_file: r.u16()?,
    };
    let gains = GainSettings {
        pga_gain_db: r.f64()?,
        preamp_gain_db: r.f64()?,
    };
    let schedule = read_schedule(&mut r)?;
    let (silence_gate, bandpass) = read_dsp(&mut r)?;
    let cfg = DeviceConfig {
        format,
        gains,
        schedule,
        silence_gate,
        bandpass,
        battery_floor_percent: r.f64()?,
        rtc_time: from_unix_seconds(r.i64()?)?,
    };
    r.finish()?;
    Ok(cfg)
}

struct SlotImage {
    seq: u32,
    cfg: DeviceConfig,
}

fn read_slot(eeprom: &VirtualEeprom, slot: usize) -> Option<SlotImage> {
    let raw = eeprom.read(SLOT_ADDRS[slot], SLOT_BYTES).ok()?;
    if raw[0] != COMMITTED {
        return None;
    }
    let body = &raw[1..];
    if body[..4] != MAGIC || body[4] != IMAGE_VERSION {
        return None;
    }
    let seq = u32::from_le_bytes(body[5..9].try_into().ok()?);
    let len = usize::from(u16::from_le_bytes([body[9], body[10]]));
    let end = BODY_HEADER + len;
    if end + 2 > body.len() {
        return None;
    }
    let crc = u16::from_le_bytes([body[end], body[end + 1]]);
    if crc != crc16_ccitt_false(&body[..end]) {
        return None;
    }
    let cfg = decode_config(&body[BODY_HEADER..end]).ok()?;
    Some(SlotImage { seq, cfg })
}

fn newer(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) > 0
}

/// Index and sequence number of the slot holding the current image.
fn active_slot(eeprom: &VirtualEeprom) -> Option<(usize, SlotImage)> {
    match (read_slot(eeprom, 0), read_slot(eeprom, 1)) {
        (Some(a), Some(b)) => Some(if newer(b.seq, a.seq) { (1, b) } else { (0, a) }),
        (Some(a), None) => Some((0, a)),
        (None, Some(b)) => Some((1, b)),
        (None, None) => None,
    }
}

/// The stored configuration, or `None` for a blank or corrupted EEPROM.
pub fn load_config(eeprom: &VirtualEeprom) -> Option<DeviceConfig> {
    active_slot(eeprom).map(|(_, s)| s.cfg)
}

/// Writes `cfg` into the inactive slot, commits it, then retires the old
/// one. A power cut at any byte leaves either the old or the new image
/// loadable.
pub fn persist_config(eeprom: &mut VirtualEeprom, cfg: &DeviceConfig) -> Result<(), PersistError> {
    let payload = encode_config(cfg);
    let mut body = Vec::with_capacity(BODY_HEADER + payload.len() + 2);
    body.extend_from_slice(&MAGIC);
    body.push(IMAGE_VERSION);
    let (target, seq, old) = match active_slot(eeprom) {
        Some((slot, img)) => (1 - slot, img.seq.wrapping_add(1), Some(slot)),
        None => (0, 0, None),
    };
    body.extend_from_slice(&seq.to_le_bytes());
    body.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    body.extend_from_slice(&payload);
    body.extend_from_slice(&crc16_ccitt_false(&body).to_le_bytes());
    if body.len() + 1 > SLOT_BYTES {
        return Err(PersistError::TooLarge(body.len() + 1));
    }

    let base = SLOT_ADDRS[target];
    eeprom.write(base, &[UNCOMMITTED])?;
    eeprom.write(base + 1, &body)?;
    eeprom.write(base, &[COMMITTED])?;
    if let Some(old) = old {
        eeprom.write(SLOT_ADDRS[old], &[UNCOMMITTED])?;
    }
    Ok(())
}

/// Returns both slots to the erased state.
pub fn erase_config(eeprom: &mut VirtualEeprom) -> Result<(), PersistError> {
    for addr in SLOT_ADDRS {
        eeprom.erase(addr, SLOT_BYTES)?;
    }
    Ok(())
}
