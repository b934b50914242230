//! Virtual four-microphone front end.
//!
//! [`AudioSource`] is the declarative description (it appears in scenario
//! files); [`SourceReader`] is the stateful, seekable generator built from
//! it. Samples are normalized floats in [-1, 1] until [`quantize`].

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AudioFormat;

pub const MIC_CHANNELS: usize = 4;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AudioSource {
    #[default]
    Silence,
    /// Constant level on every channel.
    Dc { level: f64 },
    Tone { freq_hz: f64, amplitude: f64 },
    /// Uniform white noise in [-amplitude, amplitude].
    Noise { amplitude: f64, seed: u64 },
    /// PCM WAV file; channels are reused cyclically when fewer than four.
    FilePlayback { path: PathBuf },
    /// Timed segments played back to back, each from its own start.
    Mixture {
        segments: Vec<Segment>,
        #[serde(default)]
        repeat: bool,
    },
    /// One source per microphone (exactly four).
    Channels { channels: Vec<AudioSource> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: f64,
    pub source: AudioSource,
}


#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("channel map needs exactly {MIC_CHANNELS} sources, got {0}")]
    ChannelCount(usize),
    #[error("mixture segment durations must be positive")]
    EmptySegment,
}

/// Quantizes a normalized sample to a signed PCM code of the given depth.
pub fn quantize(x: f64, bit_depth: u16) -> i32 {
    let full = ((1i64 << (bit_depth - 1)) - 1) as f64;
    (x.clamp(-1.0, 1.0) * full).round() as i32
}

/// Four channels of quantized samples, frame-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameBlock {
    pub frames: usize,
    pub samples: Vec<i32>,
}

impl FrameBlock {
    pub fn sample(&self, frame: usize, channel: usize) -> i32 {
        self.samples[frame * MIC_CHANNELS + channel]
    }
}

enum Gen {
    Silence,
    Dc(f64),
    Tone { freq_hz: f64, amplitude: f64 },
    Noise { amplitude: f64, rng: ChaCha8Rng },
    File(FileData),
    Mixture {
        // (first frame, frame count, generator)
        segments: Vec<(u64, u64, Gen)>,
        total: u64,
        repeat: bool,
    },
    Channels(Vec<Gen>),
}

struct FileData {
    channels: usize,
    rate: u32,
    frames: u64,
    samples: Vec<f64>,
}

fn load_wav(path: &Path) -> Result<FileData, AudioError> {
    let wrap = |source| AudioError::File {
        path: path.to_owned(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wrap)?;
    let spec = reader.spec();
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wrap)?,
        hound::SampleFormat::Int => {
            let full = ((1i64 << (spec.bits_per_sample - 1)) - 1) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / full))
                .collect::<Result<_, _>>()
                .map_err(wrap)?
        }
    };
    let channels = usize::from(spec.channels.max(1));
    Ok(FileData {
        channels,
        rate: spec.sample_rate,
        frames: (samples.len() / channels) as u64,
        samples,
    })
}

impl Gen {
    fn build(src: &AudioSource, sample_rate: u32) -> Result<Gen, AudioError> {
        Ok(match src {
            AudioSource::Silence => Gen::Silence,
            AudioSource::Dc { level } => Gen::Dc(*level),
            AudioSource::Tone { freq_hz, amplitude } => Gen::Tone {
                freq_hz: *freq_hz,
                amplitude: *amplitude,
            },
            AudioSource::Noise { amplitude, seed } => Gen::Noise {
                amplitude: *amplitude,
                rng: ChaCha8Rng::seed_from_u64(*seed),
            },
            AudioSource::FilePlayback { path } => Gen::File(load_wav(path)?),
            AudioSource::Mixture { segments, repeat } => {
                let mut out = Vec::with_capacity(segments.len());
                let mut start = 0u64;
                for seg in segments {
                    let len = (seg.duration_s * f64::from(sample_rate)).round();
                    if !(len >= 1.0) {
                        return Err(AudioError::EmptySegment);
                    }
                    let len = len as u64;
                    out.push((start, len, Gen::build(&seg.source, sample_rate)?));
                    start += len;
                }
                Gen::Mixture {
                    segments: out,
                    total: start,
                    repeat: *repeat,
                }
            }
            AudioSource::Channels { channels } => {
                if channels.len() != MIC_CHANNELS {
                    return Err(AudioError::ChannelCount(channels.len()));
                }
                Gen::Channels(
                    channels
                        .iter()
                        .map(|c| Gen::build(c, sample_rate))
                        .collect::<Result<_, _>>()?,
                )
            }
        })
    }

    /// Writes `out.len() / 4` frames starting at absolute frame `start`.
    /// Returns true if a file ran out of data inside the range.
    fn fill(&mut self, start: u64, sample_rate: u32, out: &mut [f64]) -> bool {
        let frames = out.len() / MIC_CHANNELS;
        match self {
            Gen::Silence => {
                out.fill(0.0);
                false
            }
            Gen::Dc(level) => {
                out.fill(*level);
                false
            }
            Gen::Tone { freq_hz, amplitude } => {
                let step = TAU * *freq_hz / f64::from(sample_rate);
                for (i, frame) in out.chunks_exact_mut(MIC_CHANNELS).enumerate() {
                    // Phase from the absolute index keeps long runs exact.
                    let k = (start + i as u64) as f64;
                    frame.fill(*amplitude * (step * k).sin());
                }
                false
            }
            Gen::Noise { amplitude, rng } => {
                // Two 32-bit words per sample, so any frame is directly seekable.
                rng.set_word_pos(u128::from(start) * (MIC_CHANNELS as u128) * 2);
                for s in out.iter_mut() {
                    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    *s = *amplitude * (2.0 * u - 1.0);
                }
                false
            }
            Gen::File(data) => {
                let mut exhausted = false;
                for (i, frame) in out.chunks_exact_mut(MIC_CHANNELS).enumerate() {
                    let k = start + i as u64;
                    let src = k * u64::from(data.rate) / u64::from(sample_rate);
                    if src >= data.frames {
                        frame.fill(0.0);
                        exhausted = true;
                        continue;
                    }
                    let base = src as usize * data.channels;
                    for (c, s) in frame.iter_mut().enumerate() {
                        *s = data.samples[base + c % data.channels];
                    }
                }
                exhausted
            }
            Gen::Mixture {
                segments,
                total,
                repeat,
            } => {
                let mut exhausted = false;
                let mut done = 0usize;
                while done < frames {
                    let k = start + done as u64;
                    let pos = if *repeat && *total > 0 { k % *total } else { k };
                    let slot = segments
                        .iter_mut()
                        .find(|(s, len, _)| pos >= *s && pos < *s + *len);
                    match slot {
                        Some((s, len, gen)) => {
                            let local = pos - *s;
                            let n = ((*len - local) as usize).min(frames - done);
                            let chunk = &mut out[done * MIC_CHANNELS..(done + n) * MIC_CHANNELS];
                            exhausted |= gen.fill(local, sample_rate, chunk);
                            done += n;
                        }
                        None => {
                            out[done * MIC_CHANNELS..].fill(0.0);
                            done = frames;
                        }
                    }
                }
                exhausted
            }
            Gen::Channels(gens) => {
                let mut exhausted = false;
                let mut scratch = vec![0.0; out.len()];
                for (c, g) in gens.iter_mut().enumerate() {
                    exhausted |= g.fill(start, sample_rate, &mut scratch);
                    for (dst, src) in out
                        .chunks_exact_mut(MIC_CHANNELS)
                        .zip(scratch.chunks_exact(MIC_CHANNELS))
                    {
                        dst[c] = src[c];
                    }
                }
                exhausted
            }
        }
    }
}

/// Stateful reader over an [`AudioSource`]. Consecutive reads continue
/// where the previous one stopped.
pub struct SourceReader {
    gen: Gen,
    sample_rate: u32,
    cursor: u64,
    exhausted: bool,
}

impl SourceReader {
    pub fn open(source: &AudioSource, sample_rate: u32) -> Result<Self, AudioError> {
        Ok(Self {
            gen: Gen::build(source, sample_rate)?,
            sample_rate,
            cursor: 0,
            exhausted: false,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn position(&self) -> u64 {
        self.cursor
    }

    pub fn seek(&mut self, frame: u64) {
        self.cursor = frame;
    }

    /// True once a file-backed source has been read past its end.
    pub fn exhausted(&self) -> bool {
        self.exhausted
    }

    /// Reads `n_frames` frames of normalized samples (four channels each).
    pub fn read_f64(&mut self, n_frames: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_frames * MIC_CHANNELS];
        self.read_into(&mut out);
        out
    }

    pub fn read_into(&mut self, out: &mut [f64]) {
        let frames = out.len() / MIC_CHANNELS;
        self.exhausted |= self.gen.fill(self.cursor, self.sample_rate, out);
        self.cursor += frames as u64;
    }

    /// Reads and quantizes `n_frames` frames at the format's bit depth.
    pub fn audio_read(&mut self, n_frames: usize, format: &AudioFormat) -> FrameBlock {
        let raw = self.read_f64(n_frames);
        FrameBlock {
            frames: n_frames,
            samples: raw.iter().map(|&x| quantize(x, format.bit_depth)).collect(),
        }
    }
}
