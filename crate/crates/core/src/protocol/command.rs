//! Packet IDs and their payload layouts. All integers and floats are
//! little-endian.

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::{encode_packet, ConfigPacket, EncodeError};
use crate::model::{
    AudioFormat, BandpassSettings, DeviceConfig, GainSettings, GateMetric, Schedule, SilenceGateSettings,
    Timestamp,
};
use chrono::NaiveTime;

pub mod id {
    pub const SET_AUDIO_FORMAT: u8 = 0x01;
    pub const SET_GAINS: u8 = 0x02;
    pub const SET_SCHEDULE: u8 = 0x03;
    pub const SET_DSP: u8 = 0x04;
    pub const SET_RTC_TIME: u8 = 0x05;
    pub const FACTORY_RESET: u8 = 0x06;
    pub const FORCED_SLEEP: u8 = 0x07;
    pub const QUERY_STATUS: u8 = 0x08;
    pub const SET_FULL_PROFILE: u8 = 0x09;

    pub const ACK: u8 = 0x80;
    pub const NACK: u8 = 0x81;
    pub const STATUS: u8 = 0x88;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("unknown packet id 0x{0:02X}")]
    UnknownId(u8),
    #[error("payload truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("invalid field {field}: {detail}")]
    Field { field: &'static str, detail: String },
}

fn field(field: &'static str, detail: impl Into<String>) -> PayloadError {
    PayloadError::Field {
        field,
        detail: detail.into(),
    }
}

#[derive(Default)]
pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], PayloadError> {
        let end = self.pos + N;
        let bytes = self
            .data
            .get(self.pos..end)
            .ok_or(PayloadError::Truncated(self.data.len()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.take::<1>()?[0])
    }
    pub fn u16(&mut self) -> Result<u16, PayloadError> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    pub fn u32(&mut self) -> Result<u32, PayloadError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    pub fn i64(&mut self) -> Result<i64, PayloadError> {
        Ok(i64::from_le_bytes(self.take()?))
    }
    pub fn f64(&mut self) -> Result<f64, PayloadError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    pub fn bool(&mut self, name: &'static str) -> Result<bool, PayloadError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(field(name, format!("flag must be 0 or 1, got {v}"))),
        }
    }

    pub fn finish(self) -> Result<(), PayloadError> {
        match self.data.len() - self.pos {
            0 => Ok(()),
            n => Err(PayloadError::Trailing(n)),
        }
    }
}

fn time_of_day(secs: u32, name: &'static str) -> Result<NaiveTime, PayloadError> {
    NaiveTime::from_num_seconds_from_midnight_opt(secs, 0)
        .ok_or_else(|| field(name, format!("{secs} s is not a time of day")))
}

pub(crate) fn write_schedule(w: &mut Writer, s: &Schedule) {
    use chrono::Timelike;
    match s {
        Schedule::Daily { sunrise, sunset } => {
            w.u8(0)
                .u32(sunrise.num_seconds_from_midnight())
                .u32(sunset.num_seconds_from_midnight());
        }
        Schedule::Hourly {
            wake_times,
            session_minutes,
        } => {
            w.u8(1).u16(*session_minutes as u16).u8(wake_times.len() as u8);
            for t in wake_times {
                w.u32(t.num_seconds_from_midnight());
            }
        }
    }
}

pub(crate) fn read_schedule(r: &mut Reader<'_>) -> Result<Schedule, PayloadError> {
    match r.u8()? {
        0 => Ok(Schedule::Daily {
            sunrise: time_of_day(r.u32()?, "sunrise")?,
            sunset: time_of_day(r.u32()?, "sunset")?,
        }),
        1 => {
            let session_minutes = u32::from(r.u16()?);
            let n = r.u8()?;
            let wake_times = (0..n)
                .map(|_| time_of_day(r.u32()?, "wake_times"))
                .collect::<Result<_, _>>()?;
            Ok(Schedule::Hourly {
                wake_times,
                session_minutes,
            })
        }
        v => Err(field("schedule.mode", format!("unknown mode {v}"))),
    }
}

pub(crate) fn write_dsp(w: &mut Writer, gate: &SilenceGateSettings, bp: &BandpassSettings) {
    w.u8(gate.enabled.into())
        .f64(gate.threshold)
        .u8(match gate.metric {
            GateMetric::Peak => 0,
            GateMetric::Rms => 1,
        })
        .u32(gate.frame_ms)
        .u8(bp.enabled.into())
        .f64(bp.low_hz)
        .f64(bp.high_hz)
        .u8(bp.order.min(255) as u8);
}

pub(crate) fn read_dsp(r: &mut Reader<'_>) -> Result<(SilenceGateSettings, BandpassSettings), PayloadError> {
    let gate = SilenceGateSettings {
        enabled: r.bool("silence_gate.enabled")?,
        threshold: r.f64()?,
        metric: match r.u8()? {
            0 => GateMetric::Peak,
            1 => GateMetric::Rms,
            v => return Err(field("silence_gate.metric", format!("unknown metric {v}"))),
        },
        frame_ms: r.u32()?,
    };
    let bp = BandpassSettings {
        enabled: r.bool("bandpass.enabled")?,
        low_hz: r.f64()?,
        high_hz: r.f64()?,
        order: u32::from(r.u8()?),
    };
    Ok((gate, bp))
}

pub(crate) fn unix_seconds(t: Timestamp) -> i64 {
    t.and_utc().timestamp()
}

pub(crate) fn from_unix_seconds(s: i64) -> Result<Timestamp, PayloadError> {
    DateTime::from_timestamp(s, 0)
        .map(|d| d.naive_utc())
        .ok_or_else(|| field("rtc_time", format!("{s} out of range")))
}

/// A decoded inbound packet.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SetAudioFormat { sample_rate_hz: u32, bit_depth: u16 },
    SetGains(GainSettings),
    SetSchedule(Schedule),
    SetDsp {
        silence_gate: SilenceGateSettings,
        bandpass: BandpassSettings,
    },
    SetRtcTime(Timestamp),
    FactoryReset,
    ForcedSleep,
    QueryStatus,
    SetFullProfile(String),
}

impl Command {
    pub fn id(&self) -> u8 {
        match self {
            Command::SetAudioFormat { .. } => id::SET_AUDIO_FORMAT,
            Command::SetGains(_) => id::SET_GAINS,
            Command::SetSchedule(_) => id::SET_SCHEDULE,
            Command::SetDsp { .. } => id::SET_DSP,
            Command::SetRtcTime(_) => id::SET_RTC_TIME,
            Command::FactoryReset => id::FACTORY_RESET,
            Command::ForcedSleep => id::FORCED_SLEEP,
            Command::QueryStatus => id::QUERY_STATUS,
            Command::SetFullProfile(_) => id::SET_FULL_PROFILE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::SetAudioFormat { .. } => "SetAudioFormat",
            Command::SetGains(_) => "SetGains",
            Command::SetSchedule(_) => "SetSchedule",
            Command::SetDsp { .. } => "SetDsp",
            Command::SetRtcTime(_) => "SetRtcTime",
            Command::FactoryReset => "FactoryReset",
            Command::ForcedSleep => "ForcedSleep",
            Command::QueryStatus => "QueryStatus",
            Command::SetFullProfile(_) => "SetFullProfile",
        }
    }

    /// True for packets that change the stored configuration.
    pub fn is_config_change(&self) -> bool {
        !matches!(self, Command::FactoryReset | Command::ForcedSleep | Command::QueryStatus)
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            Command::SetAudioFormat {
                sample_rate_hz,
                bit_depth,
            } => {
                w.u32(*sample_rate_hz).u8(*bit_depth as u8);
            }
            Command::SetGains(g) => {
                w.f64(g.pga_gain_db).f64(g.preamp_gain_db);
            }
            Command::SetSchedule(s) => write_schedule(&mut w, s),
            Command::SetDsp {
                silence_gate,
                bandpass,
            } => write_dsp(&mut w, silence_gate, bandpass),
            Command::SetRtcTime(t) => {
                w.i64(unix_seconds(*t));
            }
            Command::FactoryReset | Command::ForcedSleep | Command::QueryStatus => {}
            Command::SetFullProfile(text) => w.0.extend_from_slice(text.as_bytes()),
        }
        w.0
    }

    pub fn to_frame(&self) -> Result<Vec<u8>, EncodeError> {
        encode_packet(self.id(), &self.payload())
    }

    pub fn parse(packet: &ConfigPacket) -> Result<Command, PayloadError> {
        let mut r = Reader::new(&packet.payload);
        let cmd = match packet.id {
            id::SET_AUDIO_FORMAT => Command::SetAudioFormat {
                sample_rate_hz: r.u32()?,
                bit_depth: u16::from(r.u8()?),
            },
            id::SET_GAINS => Command::SetGains(GainSettings {
                pga_gain_db: r.f64()?,
                preamp_gain_db: r.f64()?,
            }),
            id::SET_SCHEDULE => Command::SetSchedule(read_schedule(&mut r)?),
            id::SET_DSP => {
                let (silence_gate, bandpass) = read_dsp(&mut r)?;
                Command::SetDsp {
                    silence_gate,
                    bandpass,
                }
            }
            id::SET_RTC_TIME => Command::SetRtcTime(from_unix_seconds(r.i64()?)?),
            id::FACTORY_RESET => Command::FactoryReset,
            id::FORCED_SLEEP => Command::ForcedSleep,
            id::QUERY_STATUS => Command::QueryStatus,
            id::SET_FULL_PROFILE => {
                let text = std::str::from_utf8(&packet.payload)
                    .map_err(|e| field("profile", e.to_string()))?;
                return Ok(Command::SetFullProfile(text.to_owned()));
            }
            other => return Err(PayloadError::UnknownId(other)),
        };
        r.finish()?;
        Ok(cmd)
    }

    /// `base` with this command's fields applied; `None` for commands that
    /// carry no configuration.
    pub fn apply_to(&self, base: &DeviceConfig) -> Option<DeviceConfig> {
        let mut cfg = base.clone();
        match self {
            Command::SetAudioFormat {
                sample_rate_hz,
                bit_depth,
            } => {
                cfg.format = AudioFormat {
                    sample_rate_hz: *sample_rate_hz,
                    bit_depth: *bit_depth,
                    ..cfg.format
                }
            }
            Command::SetGains(g) => cfg.gains = *g,
            Command::SetSchedule(s) => cfg.schedule = s.clone(),
            Command::SetDsp {
                silence_gate,
                bandpass,
            } => {
                cfg.silence_gate = *silence_gate;
                cfg.bandpass = *bandpass;
            }
            Command::SetRtcTime(t) => cfg.rtc_time = *t,
            _ => return None,
        }
        Some(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum NackCode {
    WrongMode = 1,
    Validation = 2,
    Storage = 3,
    Malformed = 4,
    UnknownId = 5,
}

impl NackCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => NackCode::WrongMode,
            2 => NackCode::Validation,
            3 => NackCode::Storage,
            4 => NackCode::Malformed,
            5 => NackCode::UnknownId,
            _ => return None,
        })
    }
}

/// Device-to-app packets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Response {
    Ack { request_id: u8 },
    Nack { request_id: u8, code: NackCode, message: String },
    /// Compact JSON status document.
    Status { json: String },
}

impl Response {
    pub fn nack(request_id: u8, code: NackCode, message: impl Into<String>) -> Self {
        Response::Nack {
            request_id,
            code,
            message: message.into(),
        }
    }

    pub fn to_packet(&self) -> ConfigPacket {
        let (id, payload) = match self {
            Response::Ack { request_id } => (id::ACK, vec![*request_id]),
            Response::Nack {
                request_id,
                code,
                message,
            } => {
                let mut p = vec![*request_id, *code as u8];
                p.extend_from_slice(message.as_bytes());
                (id::NACK, p)
            }
            Response::Status { json } => (id::STATUS, json.as_bytes().to_vec()),
        };
        ConfigPacket { id, payload }
    }

    /// Frame bytes; over-long messages are cut at a character boundary so
    /// the frame always fits.
    pub fn to_frame(&self) -> Vec<u8> {
        let mut packet = self.to_packet();
        if packet.payload.len() > super::frame::MAX_PAYLOAD {
            let keep = match self {
                Response::Nack { message, .. } => {
                    let mut n = super::frame::MAX_PAYLOAD - 2;
                    while !message.is_char_boundary(n) {
                        n -= 1;
                    }
                    n + 2
                }
                _ => super::frame::MAX_PAYLOAD,
            };
            packet.payload.truncate(keep);
        }
        encode_packet(packet.id, &packet.payload).expect("payload bounded")
    }

    pub fn parse(packet: &ConfigPacket) -> Result<Response, PayloadError> {
        let p = &packet.payload;
        match packet.id {
            id::ACK if p.len() == 1 => Ok(Response::Ack { request_id: p[0] }),
            id::NACK if p.len() >= 2 => Ok(Response::Nack {
                request_id: p[0],
                code: NackCode::from_u8(p[1]).ok_or_else(|| field("nack.code", p[1].to_string()))?,
                message: String::from_utf8_lossy(&p[2..]).into_owned(),
            }),
            id::STATUS => Ok(Response::Status {
                json: String::from_utf8_lossy(p).into_owned(),
            }),
            id::ACK | id::NACK => Err(PayloadError::Truncated(p.len())),
            other => Err(PayloadError::UnknownId(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::frame::decode_packet;
    use crate::protocol::frame::Decoded;
    use proptest::prelude::*;

    fn t(h: u32, m: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(h, m, 0).unwrap()
    }

    fn samples() -> Vec<Command> {
        vec![
            Command::SetAudioFormat {
                sample_rate_hz: 48_000,
                bit_depth: 16,
            },
            Command::SetGains(GainSettings {
                pga_gain_db: 12.375,
                preamp_gain_db: 20.0,
            }),
            Command::SetSchedule(Schedule::default()),
            Command::SetSchedule(Schedule::Hourly {
                wake_times: vec![t(5, 30), t(12, 0), t(19, 45)],
                session_minutes: 15,
            }),
            Command::SetDsp {
                silence_gate: SilenceGateSettings {
                    enabled: true,
                    threshold: 0.1,
                    metric: GateMetric::Rms,
                    frame_ms: 20,
                },
                bandpass: BandpassSettings::default(),
            },
            Command::SetRtcTime(DeviceConfig::default().rtc_time),
            Command::FactoryReset,
            Command::ForcedSleep,
            Command::QueryStatus,
            Command::SetFullProfile("{\"schema_version\":1}".into()),
        ]
    }

    #[test]
    fn every_command_round_trips_through_a_frame() {
        for c in samples() {
            let f = c.to_frame().unwrap();
            let Decoded::Packet { packet, .. } = decode_packet(&f) else {
                panic!("no packet for {c:?}")
            };
            assert_eq!(Command::parse(&packet).unwrap(), c);
        }
    }

    #[test]
    fn audio_format_payload_layout() {
        let c = Command::SetAudioFormat {
            sample_rate_hz: 48_000,
            bit_depth: 24,
        };
        assert_eq!(c.payload(), vec![0x80, 0xBB, 0x00, 0x00, 24]);
    }

    #[test]
    fn unknown_id_and_bad_lengths() {
        let p = ConfigPacket { id: 0x42, payload: vec![] };
        assert_eq!(Command::parse(&p), Err(PayloadError::UnknownId(0x42)));
        let p = ConfigPacket { id: id::SET_GAINS, payload: vec![0; 15] };
        assert!(matches!(Command::parse(&p), Err(PayloadError::Truncated(_))));
        let p = ConfigPacket { id: id::QUERY_STATUS, payload: vec![1] };
        assert_eq!(Command::parse(&p), Err(PayloadError::Trailing(1)));
    }

    #[test]
    fn responses_round_trip() {
        for r in [
            Response::Ack { request_id: 1 },
            Response::nack(3, NackCode::Validation, "format.sample_rate_hz: sample_rate below 8000 (got 4000)"),
            Response::Status { json: "{}".into() },
        ] {
            assert_eq!(Response::parse(&r.to_packet()).unwrap(), r);
        }
        let long = Response::nack(1, NackCode::Validation, "é".repeat(600));
        assert!(long.to_frame().len() <= 1030);
    }

    proptest! {
        #[test]
        fn arbitrary_payloads_never_panic(id in any::<u8>(), payload in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = Command::parse(&ConfigPacket { id, payload });
        }

        #[test]
        fn gains_round_trip(a in -100.0f64..100.0, b in -100.0f64..100.0) {
            let c = Command::SetGains(GainSettings { pga_gain_db: a, preamp_gain_db: b });
            let p = ConfigPacket { id: c.id(), payload: c.payload() };
            prop_assert_eq!(Command::parse(&p).unwrap(), c);
        }
    }
}
