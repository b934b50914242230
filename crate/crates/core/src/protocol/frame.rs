//! Byte-stream framing: `0xAA ‖ id ‖ len (u16 LE) ‖ payload ‖ crc (u16 LE)`,
//! the CRC covering id, length and payload.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::crc::{crc16_ccitt_false, crc16_update};

pub const SYNC: u8 = 0xAA;
pub const MAX_PAYLOAD: usize = 1024;
/// Sync, id and length in front, CRC behind.
pub const HEADER_LEN: usize = 4;
pub const FRAME_OVERHEAD: usize = HEADER_LEN + 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigPacket {
    pub id: u8,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    Oversize(usize),
}

fn frame_crc(id: u8, len: u16, payload: &[u8]) -> u16 {
    let l = len.to_le_bytes();
    crc16_update(crc16_ccitt_false(&[id, l[0], l[1]]), payload)
}

pub fn encode_packet(id: u8, payload: &[u8]) -> Result<Vec<u8>, EncodeError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(EncodeError::Oversize(payload.len()));
    }
    let len = payload.len() as u16;
    let mut out = Vec::with_capacity(payload.len() + FRAME_OVERHEAD);
    out.push(SYNC);
    out.push(id);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&frame_crc(id, len, payload).to_le_bytes());
    Ok(out)
}

/// Why a candidate frame starting at a sync byte was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFault {
    CrcMismatch { expected: u16, found: u16 },
    LengthTooLarge(u16),
}

/// Result of one decoding step over a buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded<'a> {
    Packet {
        packet: ConfigPacket,
        /// Non-sync bytes skipped before the frame.
        skipped: usize,
        rest: &'a [u8],
    },
    /// The buffer ends inside a candidate frame (or holds no sync byte at
    /// all). Only the skipped junk may be discarded.
    NeedMore { skipped: usize },
    /// The candidate at `offset` is not a frame. Decoding resumes at
    /// `rest`, one byte past that sync byte.
    Corrupt {
        offset: usize,
        fault: FrameFault,
        rest: &'a [u8],
    },
}

/// Scans `buf` for the next frame.
pub fn decode_packet(buf: &[u8]) -> Decoded<'_> {
    let Some(start) = buf.iter().position(|&b| b == SYNC) else {
        return Decoded::NeedMore { skipped: buf.len() };
    };
    let frame = &buf[start..];
    if frame.len() < HEADER_LEN {
        return Decoded::NeedMore { skipped: start };
    }
    let id = frame[1];
    let len = u16::from_le_bytes([frame[2], frame[3]]);
    if usize::from(len) > MAX_PAYLOAD {
        return Decoded::Corrupt {
            offset: start,
            fault: FrameFault::LengthTooLarge(len),
            rest: &buf[start + 1..],
        };
    }
    let total = usize::from(len) + FRAME_OVERHEAD;
    if frame.len() < total {
        return Decoded::NeedMore { skipped: start };
    }
    let payload = &frame[HEADER_LEN..HEADER_LEN + usize::from(len)];
    let found = u16::from_le_bytes([frame[total - 2], frame[total - 1]]);
    let expected = frame_crc(id, len, payload);
    if found != expected {
        return Decoded::Corrupt {
            offset: start,
            fault: FrameFault::CrcMismatch { expected, found },
            rest: &buf[start + 1..],
        };
    }
    Decoded::Packet {
        packet: ConfigPacket {
            id,
            payload: payload.to_vec(),
        },
        skipped: start,
        rest: &buf[start + total..],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEvent {
    Packet(ConfigPacket),
    /// Absolute stream offset of a rejected candidate frame.
    Corrupt { offset: u64, fault: FrameFault },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderStats {
    pub packets: u64,
    pub corrupt: u64,
    pub junk_bytes: u64,
}

/// Incremental decoder for one transport connection.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    /// Stream offset of `buf[0]`.
    base: u64,
    stats: DecoderStats,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    fn consume(&mut self, n: usize) {
        self.buf.drain(..n);
        self.base += n as u64;
    }

    /// Next packet or fault, or `None` when more input is needed.
    pub fn next_event(&mut self) -> Option<StreamEvent> {
        let (event, consumed, junk) = match decode_packet(&self.buf) {
            Decoded::Packet {
                packet,
                skipped,
                rest,
            } => {
                let consumed = self.buf.len() - rest.len();
                (Some(StreamEvent::Packet(packet)), consumed, skipped)
            }
            Decoded::Corrupt {
                offset,
                fault,
                rest,
            } => {
                let consumed = self.buf.len() - rest.len();
                let ev = StreamEvent::Corrupt {
                    offset: self.base + offset as u64,
                    fault,
                };
                (Some(ev), consumed, offset)
            }
            Decoded::NeedMore { skipped } => (None, skipped, skipped),
        };
        self.stats.junk_bytes += junk as u64;
        match &event {
            Some(StreamEvent::Packet(_)) => self.stats.packets += 1,
            Some(StreamEvent::Corrupt { .. }) => self.stats.corrupt += 1,
            None => {}
        }
        self.consume(consumed);
        event
    }

    /// Drains every event available from the current buffer.
    pub fn drain_events(&mut self) -> Vec<StreamEvent> {
        std::iter::from_fn(|| self.next_event()).collect()
    }

    /// End of stream: any candidate frame still waiting for bytes can never
    /// complete, so its sync byte is dropped and the tail rescanned.
    pub fn finish(&mut self) -> Vec<StreamEvent> {
        let mut events = self.drain_events();
        while !self.buf.is_empty() {
            self.stats.junk_bytes += 1;
            self.consume(1);
            events.extend(self.drain_events());
        }
        events
    }
}
