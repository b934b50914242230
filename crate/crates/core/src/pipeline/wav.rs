//! Canonical 44-byte PCM WAV header and a streaming writer that patches
//! the sizes in on finalize.

use std::io::{self, Seek, SeekFrom, Write};

use thiserror::Error;

use crate::model::{AudioFormat, WAV_HEADER_BYTES};

pub const HEADER_LEN: usize = WAV_HEADER_BYTES as usize;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("not a canonical PCM WAV header: {0}")]
    BadHeader(&'static str),
    #[error("data chunk of {0} bytes exceeds the 4 GiB RIFF limit")]
    TooLarge(u64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Bit-exact canonical header: RIFF/WAVE, a 16-byte `fmt ` chunk with
/// format tag 1, then the `data` chunk header. All fields little-endian.
pub fn encode_wav_header(format: &AudioFormat, data_bytes: u32) -> [u8; HEADER_LEN] {
    let channels = format.channels_per_file;
    let block_align = format.block_align();
    let byte_rate = format.sample_rate_hz * u32::from(block_align);
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(b"RIFF");
    h[4..8].copy_from_slice(&(36u32.wrapping_add(data_bytes)).to_le_bytes());
    h[8..12].copy_from_slice(b"WAVE");
    h[12..16].copy_from_slice(b"fmt ");
    h[16..20].copy_from_slice(&16u32.to_le_bytes());
    h[20..22].copy_from_slice(&1u16.to_le_bytes());
    h[22..24].copy_from_slice(&channels.to_le_bytes());
    h[24..28].copy_from_slice(&format.sample_rate_hz.to_le_bytes());
    h[28..32].copy_from_slice(&byte_rate.to_le_bytes());
    h[32..34].copy_from_slice(&block_align.to_le_bytes());
    h[34..36].copy_from_slice(&format.bit_depth.to_le_bytes());
    h[36..40].copy_from_slice(b"data");
    h[40..44].copy_from_slice(&data_bytes.to_le_bytes());
    h
}

/// Recovers format and data length from a canonical header, checking that
/// the derived fields agree with each other.
pub fn parse_wav_header(h: &[u8]) -> Result<(AudioFormat, u32), WavError> {
    if h.len() < HEADER_LEN {
        return Err(WavError::BadHeader("shorter than 44 bytes"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([h[i], h[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([h[i], h[i + 1], h[i + 2], h[i + 3]]);
    if &h[0..4] != b"RIFF" || &h[8..12] != b"WAVE" {
        return Err(WavError::BadHeader("missing RIFF/WAVE tags"));
    }
    if &h[12..16] != b"fmt " || u32_at(16) != 16 || u16_at(20) != 1 {
        return Err(WavError::BadHeader("fmt chunk is not 16-byte PCM"));
    }
    if &h[36..40] != b"data" {
        return Err(WavError::BadHeader("data chunk not at offset 36"));
    }
    let format = AudioFormat {
        sample_rate_hz: u32_at(24),
        bit_depth: u16_at(34),
        channels_per_file: u16_at(22),
    };
    let data = u32_at(40);
    if !format.bit_depth.is_multiple_of(8) || format.bit_depth == 0 {
        return Err(WavError::BadHeader("bit depth not a whole number of bytes"));
    }
    if u16_at(32) != format.block_align()
        || u32_at(28) != format.sample_rate_hz * u32::from(format.block_align())
    {
        return Err(WavError::BadHeader("byte rate or block align inconsistent"));
    }
    if u32_at(4) != 36u32.wrapping_add(data) {
        return Err(WavError::BadHeader("RIFF size inconsistent with data size"));
    }
    Ok((format, data))
}

/// Appends little-endian PCM codes of the given depth (2 or 3 bytes each).
pub fn encode_samples(samples: &[i32], bit_depth: u16, out: &mut Vec<u8>) {
    match bit_depth {
        16 => {
            for &s in samples {
                out.extend_from_slice(&(s as i16).to_le_bytes());
            }
        }
        24 => {
            for &s in samples {
                out.extend_from_slice(&s.to_le_bytes()[..3]);
            }
        }
        _ => unreachable!("validated bit depth"),
    }
}

/// Inverse of [`encode_samples`]; trailing bytes that do not form a whole
/// sample are ignored.
pub fn decode_samples(bytes: &[u8], bit_depth: u16) -> Vec<i32> {
    match bit_depth {
        16 => bytes
            .chunks_exact(2)
            .map(|b| i32::from(i16::from_le_bytes([b[0], b[1]])))
            .collect(),
        24 => bytes
            .chunks_exact(3)
            .map(|b| i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8)
            .collect(),
        _ => unreachable!("validated bit depth"),
    }
}

/// Writes a placeholder header, streams PCM data, and rewrites the header
/// with the final sizes on [`WavWriter::finalize`].
pub struct WavWriter<W: Write + Seek> {
    inner: W,
    format: AudioFormat,
    data_bytes: u64,
}

impl<W: Write + Seek> WavWriter<W> {
    pub fn new(mut inner: W, format: AudioFormat) -> Result<Self, WavError> {
        inner.write_all(&encode_wav_header(&format, 0))?;
        Ok(Self {
            inner,
            format,
            data_bytes: 0,
        })
    }

    pub fn format(&self) -> &AudioFormat {
        &self.format
    }

    pub fn data_bytes(&self) -> u64 {
        self.data_bytes
    }

    pub fn write_bytes(&mut self, data: &[u8]) -> Result<(), WavError> {
        let total = self.data_bytes + data.len() as u64;
        if total > u64::from(u32::MAX - 36) {
            return Err(WavError::TooLarge(total));
        }
        self.inner.write_all(data)?;
        self.data_bytes = total;
        Ok(())
    }

    pub fn finalize(mut self) -> Result<W, WavError> {
        self.inner.seek(SeekFrom::Start(0))?;
        self.inner
            .write_all(&encode_wav_header(&self.format, self.data_bytes as u32))?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Write sink that only tracks length, for size accounting without output.
#[derive(Debug, Default, Clone, Copy)]
pub struct CountingSink {
    len: u64,
    pos: u64,
}

impl CountingSink {
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Write for CountingSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.pos += buf.len() as u64;
        self.len = self.len.max(self.pos);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Seek for CountingSink {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        let target = match pos {
            SeekFrom::Start(p) => Some(p),
            SeekFrom::End(d) => self.len.checked_add_signed(d),
            SeekFrom::Current(d) => self.pos.checked_add_signed(d),
        };
        self.pos = target.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "seek before start"))?;
        Ok(self.pos)
    }
}
