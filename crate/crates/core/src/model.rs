//! Domain types shared across the simulator, config validation, and the
//! storage arithmetic for PCM recordings.

use std::fmt;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wall-clock instant as read from the device RTC (UTC, no zone).
pub type Timestamp = NaiveDateTime;

pub const MIN_SAMPLE_RATE_HZ: u32 = 8_000;
pub const MAX_SAMPLE_RATE_HZ: u32 = 192_000;
pub const PGA_STEP_DB: f64 = 0.375;
pub const PGA_MAX_DB: f64 = 60.0;
pub const PREAMP_MAX_DB: f64 = 40.0;
/// Daily mode always records ten minutes per wake.
pub const DAILY_SESSION_MINUTES: u32 = 10;
/// Upper bound on hourly wake entries; the count travels as a single byte on the wire.
pub const MAX_WAKE_TIMES: usize = 255;
/// Canonical PCM WAV header length.
pub const WAV_HEADER_BYTES: u64 = 44;
/// Fraction of raw card capacity lost to the filesystem.
pub const DEFAULT_FS_OVERHEAD: f64 = 0.017;
/// Total storage across the four cards.
pub const DEFAULT_TOTAL_STORAGE_BYTES: u64 = 128_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AudioFormat {
    pub sample_rate_hz: u32,
    pub bit_depth: u16,
    #[serde(default = "stereo")]
    pub channels_per_file: u16,
}

fn stereo() -> u16 {
    2
}

impl AudioFormat {
    /// Stereo format at the given rate and depth.
    pub const fn stereo(sample_rate_hz: u32, bit_depth: u16) -> Self {
        Self {
            sample_rate_hz,
            bit_depth,
            channels_per_file: 2,
        }
    }

    pub const fn bytes_per_sample(&self) -> u16 {
        self.bit_depth / 8
    }

    /// Bytes per interleaved frame of one file (WAV block align).
    pub const fn block_align(&self) -> u16 {
        self.bytes_per_sample() * self.channels_per_file
    }

    /// Largest positive code for this depth, used as the full-scale divisor.
    pub fn full_scale(&self) -> f64 {
        ((1i64 << (self.bit_depth - 1)) - 1) as f64
    }
}

impl Default for AudioFormat {
    fn default() -> Self {
        Self::stereo(48_000, 16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSettings {
    /// Codec programmable gain, 0..=60 dB in 0.375 dB steps.
    pub pga_gain_db: f64,
    /// Microphone preamplifier gain, 0..=40 dB.
    pub preamp_gain_db: f64,
}

impl GainSettings {
    pub fn total_db(&self) -> f64 {
        self.pga_gain_db + self.preamp_gain_db
    }

    pub fn linear(&self) -> f64 {
        10f64.powf(self.total_db() / 20.0)
    }
}

impl Default for GainSettings {
    fn default() -> Self {
        Self {
            pga_gain_db: 0.0,
            preamp_gain_db: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Schedule {
    /// Wake at every whole hour between sunrise and sunset, ten minutes each.
    Daily {
        #[serde(with = "time_of_day")]
        sunrise: NaiveTime,
        #[serde(with = "time_of_day")]
        sunset: NaiveTime,
    },
    /// Explicit wake times, each followed by a session of `session_minutes`.
    Hourly {
        #[serde(with = "time_of_day::list")]
        wake_times: Vec<NaiveTime>,
        session_minutes: u32,
    },
}

impl Schedule {
    pub fn session_minutes(&self) -> u32 {
        match self {
            Schedule::Daily { .. } => DAILY_SESSION_MINUTES,
            Schedule::Hourly {
                session_minutes, ..
            } => *session_minutes,
        }
    }

    pub fn session_seconds(&self) -> u64 {
        u64::from(self.session_minutes()) * 60
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Daily {
            sunrise: NaiveTime::from_hms_opt(6, 0, 0).unwrap(),
            sunset: NaiveTime::from_hms_opt(18, 0, 0).unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMetric {
    #[default]
    Peak,
    Rms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilenceGateSettings {
    pub enabled: bool,
    /// Normalized amplitude in [0, 1].
    pub threshold: f64,
    #[serde(default)]
    pub metric: GateMetric,
    #[serde(default = "default_frame_ms")]
    pub frame_ms: u32,
}

fn default_frame_ms() -> u32 {
    50
}

impl Default for SilenceGateSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            threshold: 0.05,
            metric: GateMetric::Peak,
            frame_ms: default_frame_ms(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSettings {
    pub enabled: bool,
    pub low_hz: f64,
    pub high_hz: f64,
    /// Butterworth prototype order; the cascade holds this many biquads.
    #[serde(default = "default_order")]
    pub order: u32,
}

fn default_order() -> u32 {
    4
}

impl Default for BandpassSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            low_hz: 1_000.0,
            high_hz: 8_000.0,
            order: default_order(),
        }
    }
}

/// Every user-settable parameter of the device. This is what gets persisted
/// to EEPROM and exchanged as a JSON profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub format: AudioFormat,
    pub gains: GainSettings,
    pub schedule: Schedule,
    pub silence_gate: SilenceGateSettings,
    pub bandpass: BandpassSettings,
    pub battery_floor_percent: f64,
    pub rtc_time: Timestamp,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            format: AudioFormat::default(),
            gains: GainSettings::default(),
            schedule: Schedule::default(),
            silence_gate: SilenceGateSettings::default(),
            bandpass: BandpassSettings::default(),
            battery_floor_percent: 10.0,
            rtc_time: NaiveDate::from_ymd_opt(2025, 1, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceState {
    Boot,
    ConfigMode,
    Sleep,
    Recording,
    Writing,
    StorageFull,
    LowBattery,
}

impl DeviceState {
    pub const ALL: [DeviceState; 7] = [
        DeviceState::Boot,
        DeviceState::ConfigMode,
        DeviceState::Sleep,
        DeviceState::Recording,
        DeviceState::Writing,
        DeviceState::StorageFull,
        DeviceState::LowBattery,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            DeviceState::Boot => "boot",
            DeviceState::ConfigMode => "config_mode",
            DeviceState::Sleep => "sleep",
            DeviceState::Recording => "recording",
            DeviceState::Writing => "writing",
            DeviceState::StorageFull => "storage_full",
            DeviceState::LowBattery => "low_battery",
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(usize::from(i)).copied()
    }
}

impl fmt::Display for DeviceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One failed invariant: which field, which bound, and the offending value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub bound: String,
    pub value: String,
}

impl Violation {
    fn new(field: &str, bound: impl Into<String>, value: impl fmt::Display) -> Self {
        Self {
            field: field.to_owned(),
            bound: bound.into(),
            value: value.to_string(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} (got {})", self.field, self.bound, self.value)
    }
}

/// The complete list of violations found in a config.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct Violations(pub Vec<Violation>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn in_range(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn is_pga_step(db: f64) -> bool {
    let steps = db / PGA_STEP_DB;
    (steps - steps.round()).abs() < 1e-9
}

fn validate_format(fmt: &AudioFormat, out: &mut Vec<Violation>) {
    if fmt.sample_rate_hz < MIN_SAMPLE_RATE_HZ {
        out.push(Violation::new(
            "format.sample_rate_hz",
            format!("sample_rate below {MIN_SAMPLE_RATE_HZ}"),
            fmt.sample_rate_hz,
        ));
    }
    if fmt.sample_rate_hz > MAX_SAMPLE_RATE_HZ {
        out.push(Violation::new(
            "format.sample_rate_hz",
            format!("sample_rate above {MAX_SAMPLE_RATE_HZ}"),
            fmt.sample_rate_hz,
        ));
    }
    if fmt.bit_depth != 16 && fmt.bit_depth != 24 {
        out.push(Violation::new(
            "format.bit_depth",
            "bit_depth must be 16 or 24",
            fmt.bit_depth,
        ));
    }
    if fmt.channels_per_file != 2 {
        out.push(Violation::new(
            "format.channels_per_file",
            "each file must be stereo (2 channels)",
            fmt.channels_per_file,
        ));
    }
}

fn validate_schedule(schedule: &Schedule, out: &mut Vec<Violation>) {
    match schedule {
        Schedule::Daily { sunrise, sunset } => {
            if sunrise >= sunset {
                out.push(Violation::new(
                    "schedule.sunrise",
                    format!("sunrise must precede sunset ({})", sunset.format("%H:%M:%S")),
                    sunrise.format("%H:%M:%S"),
                ));
            }
        }
        Schedule::Hourly {
            wake_times,
            session_minutes,
        } => {
            if *session_minutes < 1 {
                out.push(Violation::new(
                    "schedule.session_minutes",
                    "session_minutes must be at least 1",
                    session_minutes,
                ));
            }
            if wake_times.is_empty() {
                out.push(Violation::new(
                    "schedule.wake_times",
                    "at least one wake time required",
                    "[]",
                ));
            }
            if wake_times.len() > MAX_WAKE_TIMES {
                out.push(Violation::new(
                    "schedule.wake_times",
                    format!("at most {MAX_WAKE_TIMES} wake times"),
                    wake_times.len(),
                ));
            }
            let span = i64::from(*session_minutes) * 60;
            for (i, pair) in wake_times.windows(2).enumerate() {
                let gap = (pair[1] - pair[0]).num_seconds();
                if gap <= 0 {
                    out.push(Violation::new(
                        &format!("schedule.wake_times[{}]", i + 1),
                        "wake times must be strictly increasing",
                        pair[1].format("%H:%M:%S"),
                    ));
                } else if gap < span {
                    out.push(Violation::new(
                        &format!("schedule.wake_times[{}]", i + 1),
                        format!("overlaps previous session ({session_minutes} min)"),
                        pair[1].format("%H:%M:%S"),
                    ));
                }
            }
            // The last session of a day must not run into the first one of the next.
            if let (Some(first), Some(last)) = (wake_times.first(), wake_times.last()) {
                let wrap = 86_400 - i64::from(last.num_seconds_from_midnight())
                    + i64::from(first.num_seconds_from_midnight());
                if wrap < span {
                    out.push(Violation::new(
                        "schedule.wake_times",
                        format!("last session overlaps next day's first ({session_minutes} min)"),
                        last.format("%H:%M:%S"),
                    ));
                }
            }
        }
    }
}

/// Checks every invariant of `cfg`. Returns the config untouched when all
/// hold, otherwise every violation found.
pub fn validate_config(cfg: DeviceConfig) -> Result<DeviceConfig, Violations> {
    let mut out = Vec::new();
    validate_format(&cfg.format, &mut out);

    let pga = cfg.gains.pga_gain_db;
    if !in_range(pga, 0.0, PGA_MAX_DB) {
        out.push(Violation::new(
            "gains.pga_gain_db",
            format!("must lie in [0, {PGA_MAX_DB}] dB"),
            pga,
        ));
    } else if !is_pga_step(pga) {
        out.push(Violation::new(
            "gains.pga_gain_db",
            format!("not a multiple of {PGA_STEP_DB}"),
            pga,
        ));
    }
    let pre = cfg.gains.preamp_gain_db;
    if !in_range(pre, 0.0, PREAMP_MAX_DB) {
        out.push(Violation::new(
            "gains.preamp_gain_db",
            format!("must lie in [0, {PREAMP_MAX_DB}] dB"),
            pre,
        ));
    }

    validate_schedule(&cfg.schedule, &mut out);
    let data_bytes = cfg.schedule.session_seconds() * bytes_per_second(&cfg.format);
    if data_bytes > u64::from(u32::MAX) - 36 {
        out.push(Violation::new(
            "schedule.session_minutes",
            "session file would exceed the 4 GiB WAV limit",
            cfg.schedule.session_minutes(),
        ));
    }

    let gate = &cfg.silence_gate;
    if !in_range(gate.threshold, 0.0, 1.0) {
        out.push(Violation::new(
            "silence_gate.threshold",
            "must lie in [0, 1]",
            gate.threshold,
        ));
    }
    if gate.frame_ms == 0 {
        out.push(Violation::new(
            "silence_gate.frame_ms",
            "frame length must be positive",
            gate.frame_ms,
        ));
    }

    let bp = &cfg.bandpass;
    if bp.enabled {
        let nyquist = f64::from(cfg.format.sample_rate_hz) / 2.0;
        if !(bp.low_hz > 0.0) {
            out.push(Violation::new("bandpass.low_hz", "must be positive", bp.low_hz));
        }
        if !(bp.low_hz < bp.high_hz) {
            out.push(Violation::new(
                "bandpass.high_hz",
                format!("must exceed low_hz ({})", bp.low_hz),
                bp.high_hz,
            ));
        }
        if !(bp.high_hz < nyquist) {
            out.push(Violation::new(
                "bandpass.high_hz",
                format!("must be below Nyquist ({nyquist} Hz)"),
                bp.high_hz,
            ));
        }
        if bp.order == 0 || !bp.order.is_multiple_of(2) || bp.order > crate::dsp::MAX_BANDPASS_ORDER {
            out.push(Violation::new(
                "bandpass.order",
                format!("must be even in [2, {}]", crate::dsp::MAX_BANDPASS_ORDER),
                bp.order,
            ));
        }
    }

    if !in_range(cfg.battery_floor_percent, 0.0, 100.0) {
        out.push(Violation::new(
            "battery_floor_percent",
            "must lie in [0, 100]",
            cfg.battery_floor_percent,
        ));
    }

    if out.is_empty() {
        Ok(cfg)
    } else {
        Err(Violations(out))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SizeError {
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("overhead fraction {0} outside [0, 1)")]
    Overhead(f64),
}

/// Data rate of one file stream: rate × bytes per sample × channels.
pub fn bytes_per_second(format: &AudioFormat) -> u64 {
    u64::from(format.sample_rate_hz)
        * u64::from(format.bytes_per_sample())
        * u64::from(format.channels_per_file)
}

/// Exact size of one WAV file holding `duration_s` seconds of audio.
pub fn session_file_bytes(format: &AudioFormat, duration_s: u64) -> Result<u64, SizeError> {
    if duration_s == 0 {
        return Err(SizeError::ZeroDuration);
    }
    Ok(WAV_HEADER_BYTES + bytes_per_second(format) * duration_s)
}

/// Number of whole files of the given length that fit into storage after
/// reserving `overhead_fraction` for the filesystem.
pub fn capacity_files(
    total_storage_bytes: u64,
    format: &AudioFormat,
    duration_s: u64,
    overhead_fraction: f64,
) -> Result<u64, SizeError> {
    if !(0.0..1.0).contains(&overhead_fraction) {
        return Err(SizeError::Overhead(overhead_fraction));
    }
    let file = session_file_bytes(format, duration_s)?;
    let usable = total_storage_bytes as f64 * (1.0 - overhead_fraction);
    Ok((usable / file as f64).floor() as u64)
}

/// Serde helpers for `HH:MM[:SS]` time-of-day strings.
pub mod time_of_day {
    use chrono::{NaiveTime, Timelike};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(t: &NaiveTime) -> String {
        if t.second() == 0 {
            t.format("%H:%M").to_string()
        } else {
            t.format("%H:%M:%S").to_string()
        }
    }

    pub fn parse(s: &str) -> Result<NaiveTime, chrono::ParseError> {
        NaiveTime::parse_from_str(s, "%H:%M:%S").or_else(|_| NaiveTime::parse_from_str(s, "%H:%M"))
    }

    pub fn serialize<S: Serializer>(t: &NaiveTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveTime, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }

    pub mod list {
        use chrono::NaiveTime;
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(ts: &[NaiveTime], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(ts.len()))?;
            for t in ts {
                seq.serialize_element(&super::format(t))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<NaiveTime>, D::Error> {
            Vec::<String>::deserialize(d)?
                .iter()
                .map(|s| super::parse(s).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}
