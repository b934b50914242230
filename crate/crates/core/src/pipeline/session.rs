use std::io::{Seek, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::double_buffer::{DoubleBuffer, HalfFate, WriterLatencyModel, WriterTimeline, HALF_BYTES};
use super::wav::{decode_samples, encode_samples, WavError, WavWriter};
use crate::dsp::{design_bandpass, BiquadCascade, DesignError, FrameGate, StreamingGate};
use crate::hw::audio::{quantize, SourceReader, MIC_CHANNELS};
use crate::hw::sd::{Placement, SdCardArray, SdError};
use crate::model::{
    bytes_per_second, AudioFormat, BandpassSettings, DeviceConfig, SilenceGateSettings, Timestamp,
    WAV_HEADER_BYTES,
};

/// Each session writes one file per I2S interface.
pub const FILES_PER_SESSION: usize = 2;

const GEN_BLOCK_FRAMES: usize = 4096;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Filter(#[from] DesignError),
}

/// Everything that shapes one capture, resolved from the device config.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    pub start: Timestamp,
    pub frames: u64,
    pub format: AudioFormat,
    pub gain_linear: f64,
    pub latency: WriterLatencyModel,
    pub bandpass: BandpassSettings,
    pub gate: SilenceGateSettings,
}

impl SessionSpec {
    pub fn from_config(cfg: &DeviceConfig, start: Timestamp, duration_s: f64, latency: WriterLatencyModel) -> Self {
        Self {
            start,
            frames: frames_for(duration_s, cfg.format.sample_rate_hz),
            format: cfg.format,
            gain_linear: cfg.gains.linear(),
            latency,
            bandpass: cfg.bandpass,
            gate: cfg.silence_gate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 / f64::from(self.format.sample_rate_hz)
    }

    pub fn stream_bytes(&self) -> u64 {
        self.frames * u64::from(self.format.block_align())
    }

    fn needs_samples(&self) -> bool {
        self.bandpass.enabled || self.gate.enabled
    }
}

/// Whole frames captured in `duration_s` seconds.
pub fn frames_for(duration_s: f64, sample_rate_hz: u32) -> u64 {
    (duration_s.max(0.0) * f64::from(sample_rate_hz) + 1e-9).floor() as u64
}

/// `REC_<yyyymmdd_HHMMSS>_I2S<n>.wav`, with `n` counting from 1.
pub fn session_file_name(start: Timestamp, interface: usize) -> String {
    format!("REC_{}_I2S{}.wav", start.format("%Y%m%d_%H%M%S"), interface + 1)
}

/// Time span, relative to the start of the written stream, that the
/// silence gate passed through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeptRegion {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavFileInfo {
    pub name: String,
    pub size_bytes: u64,
    pub data_bytes: u64,
    /// Bytes that left the double buffer for this file, before gating.
    pub captured_bytes: u64,
    pub dropped_halves: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kept_regions: Option<Vec<KeptRegion>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSession {
    pub start: Timestamp,
    pub duration_s: f64,
    pub format: AudioFormat,
    pub files: [WavFileInfo; FILES_PER_SESSION],
    pub dropped_halves: u64,
}

/// How samples are produced for a session.
pub enum Capture<'a> {
    /// Pull and quantize real samples from a source.
    Audio(&'a mut SourceReader),
    /// Only account for sizes and drops; file contents are all zero. Not
    /// usable together with DSP stages that depend on the signal.
    Accounting,
}

struct StreamDsp {
    filters: Option<[BiquadCascade; 2]>,
    gate: Option<StreamingGate>,
    gate_frame_len: usize,
    carry: Vec<u8>,
    sample_index: u64,
    decoded_frames: u64,
    full_scale: f64,
}

impl StreamDsp {
    fn new(spec: &SessionSpec) -> Result<Option<Self>, SessionError> {
        if !spec.needs_samples() {
            return Ok(None);
        }
        let fs = f64::from(spec.format.sample_rate_hz);
        let filters = if spec.bandpass.enabled {
            let c = design_bandpass(spec.bandpass.low_hz, spec.bandpass.high_hz, fs, spec.bandpass.order)?;
            Some([c.clone(), c])
        } else {
            None
        };
        let gate_frame_len = ((f64::from(spec.gate.frame_ms) * fs / 1000.0).round() as usize).max(1);
        let gate = spec.gate.enabled.then(|| {
            StreamingGate::new(FrameGate {
                frame_len: gate_frame_len,
                threshold: spec.gate.threshold,
                metric: spec.gate.metric,
                channels: usize::from(spec.format.channels_per_file),
            })
        });
        Ok(Some(Self {
            filters,
            gate,
            gate_frame_len,
            carry: Vec::new(),
            sample_index: 0,
            decoded_frames: 0,
            full_scale: spec.format.full_scale(),
        }))
    }

    fn process(&mut self, bytes: &[u8], format: &AudioFormat) -> Vec<u8> {
        self.carry.extend_from_slice(bytes);
        let bps = usize::from(format.bytes_per_sample());
        let whole = self.carry.len() / bps * bps;
        let codes = decode_samples(&self.carry[..whole], format.bit_depth);
        self.carry.drain(..whole);

        let channels = u64::from(format.channels_per_file);
        let mut x: Vec<f64> = Vec::with_capacity(codes.len());
        for c in codes {
            let mut v = f64::from(c) / self.full_scale;
            if let Some(f) = &mut self.filters {
                v = f[(self.sample_index % channels) as usize % 2].process_sample(v);
            }
            self.sample_index += 1;
            x.push(v);
        }
        self.decoded_frames = self.sample_index / channels;
        let kept = match &mut self.gate {
            Some(g) => g.push(&x),
            None => x,
        };
        encode_normalized(&kept, format)
    }

    fn finish(&mut self, format: &AudioFormat) -> (Vec<u8>, Option<Vec<KeptRegion>>) {
        let Some(g) = &mut self.gate else {
            return (Vec::new(), None);
        };
        let tail = g.finish();
        let out = encode_normalized(&tail, format);
        let fs = f64::from(format.sample_rate_hz);
        let mut regions: Vec<KeptRegion> = Vec::new();
        for (i, keep) in g.mask().iter().enumerate() {
            if !keep {
                continue;
            }
            let start = (i * self.gate_frame_len) as u64;
            let end = (start + self.gate_frame_len as u64).min(self.decoded_frames);
            let (s, e) = (start as f64 / fs, end as f64 / fs);
            match regions.last_mut() {
                Some(r) if r.end_s == s => r.end_s = e,
                _ => regions.push(KeptRegion { start_s: s, end_s: e }),
            }
        }
        (out, Some(regions))
    }

}

fn encode_normalized(x: &[f64], format: &AudioFormat) -> Vec<u8> {
    let codes: Vec<i32> = x.iter().map(|&v| quantize(v, format.bit_depth)).collect();
    let mut out = Vec::with_capacity(codes.len() * usize::from(format.bytes_per_sample()));
    encode_samples(&codes, format.bit_depth, &mut out);
    out
}

struct Stream<W: Write + Seek> {
    buffer: DoubleBuffer,
    timeline: WriterTimeline,
    writer: WavWriter<W>,
    dsp: Option<StreamDsp>,
    queue: Vec<u8>,
    queue_pos: usize,
    half_len: Vec<usize>,
    captured: u64,
    dropped: u64,
}

impl<W: Write + Seek> Stream<W> {
    fn resolve(&mut self, k: usize) -> Result<(), SessionError> {
        let fate = self.timeline.resolve_next().expect("halves resolved in order");
        if fate != HalfFate::Written {
            self.dropped += 1;
            return Ok(());
        }
        let data = &self.buffer.half(k % 2)[..self.half_len[k]];
        self.captured += data.len() as u64;
        match &mut self.dsp {
            Some(d) => {
                let out = d.process(data, self.writer.format());
                self.writer.write_bytes(&out)?;
            }
            None => self.writer.write_bytes(data)?,
        }
        Ok(())
    }
}

/// Captures one session through both double buffers and streams the
/// surviving halves into the two sinks, which receive complete WAV files.
pub fn run_session<W: Write + Seek>(
    spec: &SessionSpec,
    mut capture: Capture<'_>,
    sinks: [W; FILES_PER_SESSION],
) -> Result<(RecordingSession, [W; FILES_PER_SESSION]), SessionError> {
    let format = spec.format;
    let total = spec.stream_bytes();
    let rate = bytes_per_second(&format);
    let mut streams = Vec::with_capacity(FILES_PER_SESSION);
    for (i, sink) in sinks.into_iter().enumerate() {
        let timeline = WriterTimeline::new(total, rate, spec.latency.sampler(i as u64));
        let halves = timeline.halves() as usize;
        let half_len = (0..halves)
            .map(|k| (total - (k * HALF_BYTES) as u64).min(HALF_BYTES as u64) as usize)
            .collect();
        let dsp = match capture {
            Capture::Audio(_) => StreamDsp::new(spec)?,
            Capture::Accounting => None,
        };
        streams.push(Stream {
            buffer: DoubleBuffer::new(),
            timeline,
            writer: WavWriter::new(sink, format)?,
            dsp,
            queue: Vec::new(),
            queue_pos: 0,
            half_len,
            captured: 0,
            dropped: 0,
        });
    }

    let bits = format.bit_depth;
    let halves = streams[0].half_len.len();
    let zeros = [0u8; HALF_BYTES];
    let mut frames_left = spec.frames;
    let mut raw = Vec::new();
    let mut codes = [Vec::new(), Vec::new()];
    for k in 0..halves {
        let len = streams[0].half_len[k];
        if let Capture::Audio(source) = &mut capture {
            while streams[0].queue.len() - streams[0].queue_pos < len {
                let n = (frames_left as usize).min(GEN_BLOCK_FRAMES);
                frames_left -= n as u64;
                raw.resize(n * MIC_CHANNELS, 0.0);
                source.read_into(&mut raw);
                for c in &mut codes {
                    c.clear();
                }
                for frame in raw.chunks_exact(MIC_CHANNELS) {
                    for (ch, &v) in frame.iter().enumerate() {
                        codes[ch / 2].push(quantize(v * spec.gain_linear, bits));
                    }
                }
                for (s, c) in streams.iter_mut().zip(&codes) {
                    if s.queue_pos > 1 << 16 {
                        s.queue.drain(..s.queue_pos);
                        s.queue_pos = 0;
                    }
                    encode_samples(c, bits, &mut s.queue);
                }
            }
        }
        for s in &mut streams {
            if k >= 2 {
                s.resolve(k - 2)?;
            }
            let chunk = match capture {
                Capture::Audio(_) => {
                    let c = &s.queue[s.queue_pos..s.queue_pos + len];
                    s.queue_pos += len;
                    c
                }
                Capture::Accounting => &zeros[..len],
            };
            s.buffer.dma_write(chunk);
        }
    }

    let mut files = Vec::with_capacity(FILES_PER_SESSION);
    let mut sinks = Vec::with_capacity(FILES_PER_SESSION);
    let mut dropped_total = 0;
    for (i, mut s) in streams.into_iter().enumerate() {
        for k in halves.saturating_sub(2)..halves {
            s.resolve(k)?;
        }
        let mut kept_regions = None;
        if let Some(d) = &mut s.dsp {
            let (tail, regions) = d.finish(&format);
            s.writer.write_bytes(&tail)?;
            kept_regions = regions;
        }
        let data_bytes = s.writer.data_bytes();
        dropped_total += s.dropped;
        files.push(WavFileInfo {
            name: session_file_name(spec.start, i),
            size_bytes: WAV_HEADER_BYTES + data_bytes,
            data_bytes,
            captured_bytes: s.captured,
            dropped_halves: s.dropped,
            kept_regions,
        });
        sinks.push(s.writer.finalize()?);
    }

    let files: [WavFileInfo; FILES_PER_SESSION] = files.try_into().expect("two streams");
    let sinks: [W; FILES_PER_SESSION] = sinks.try_into().ok().expect("two streams");
    Ok((
        RecordingSession {
            start: spec.start,
            duration_s: spec.duration_s(),
            format,
            files,
            dropped_halves: dropped_total,
        },
        sinks,
    ))
}

/// Commits both files of a session to the card array, or neither.
pub fn store_session(session: &RecordingSession, sd: &mut SdCardArray) -> Result<Vec<Placement>, SdError> {
    let mut trial = sd.clone();
    let mut placements = Vec::with_capacity(FILES_PER_SESSION);
    for f in &session.files {
        placements.push(trial.write_file(&f.name, f.size_bytes)?);
    }
    *sd = trial;
    Ok(placements)
}
