//! Virtual-time event loop tying the device together.

use std::fs::{self, File};
use std::io::{self, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DurationRound, TimeDelta};

use super::ledger::{transition_entry, BatteryLevel, FileRecord, LedgerEntry, LedgerRecord, RunLedger, SessionRecord};
use super::scenario::{ActionKind, Scenario, ScenarioError};
use super::status::{BatteryStatus, CardStatus, StatusSnapshot, StorageStatus};
use crate::hw::eeprom::VirtualEeprom;
use crate::hw::energy::{Direction, EnergyState, TERMINATION_FRACTION};
use crate::hw::rtc::VirtualRtc;
use crate::hw::sd::SdCardArray;
use crate::hw::SourceReader;
use crate::model::{session_file_bytes, DeviceConfig, DeviceState, Timestamp};
use crate::pipeline::{
    frames_for, run_session, session_file_name, store_session, Capture, CountingSink, SessionSpec, WriterLatencyModel,
    FILES_PER_SESSION,
};
use crate::protocol::{apply_packet, id, load_config, persist_config, ConfigPacket, Effect, FrameDecoder, NackCode, Response, StreamEvent};
use crate::scheduler::{next_wake, step, Action, Event, MachineContext, WakeEntry};

pub const SESSIONS_DIR: &str = "sessions";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const TRANSITIONS_FILE: &str = "transitions.log";
pub const GATE_SIDECAR_FILE: &str = "gate_sidecar.log";

pub fn delta_s(s: f64) -> TimeDelta {
    TimeDelta::nanoseconds((s * 1e9).round() as i64)
}

fn secs(d: TimeDelta) -> f64 {
    match d.num_nanoseconds() {
        Some(ns) => ns as f64 / 1e9,
        None => d.num_milliseconds() as f64 / 1e3,
    }
}

#[derive(Debug, Clone)]
struct ActiveSession {
    start_sim: Timestamp,
    start_rtc: Timestamp,
    planned_s: u64,
    consumed_at_start: f64,
    config: DeviceConfig,
    index: u64,
}

impl ActiveSession {
    fn end_sim(&self) -> Timestamp {
        self.start_sim + TimeDelta::seconds(self.planned_s as i64)
    }
}

enum Sink {
    File(BufWriter<File>),
    Count(CountingSink),
}

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Sink::File(f) => f.write(buf),
            Sink::Count(c) => c.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Sink::File(f) => f.flush(),
            Sink::Count(c) => c.flush(),
        }
    }
}

impl Seek for Sink {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        match self {
            Sink::File(f) => f.seek(pos),
            Sink::Count(c) => c.seek(pos),
        }
    }
}

/// The simulated device and its surroundings. One owner advances it;
/// everything observable goes to the ledger.
pub struct World {
    scenario: Scenario,
    out: Option<PathBuf>,
    start: Timestamp,
    end: Timestamp,
    now: Timestamp,
    state: DeviceState,
    config: DeviceConfig,
    eeprom: VirtualEeprom,
    eeprom_fault_armed: bool,
    rtc: VirtualRtc,
    alarm_fired: Option<Timestamp>,
    energy: EnergyState,
    sd: SdCardArray,
    source: SourceReader,
    decoder: FrameDecoder,
    next_action: usize,
    jumper: bool,
    powered: bool,
    power_back_at: Option<Timestamp>,
    armed: Option<WakeEntry>,
    session: Option<ActiveSession>,
    abort_reason: Option<String>,
    sessions_started: u64,
    sessions_recorded: u64,
    sessions_skipped: u64,
    anomalies: u64,
    last_session: Option<SessionRecord>,
    ledger: RunLedger,
    outbox: Vec<Vec<u8>>,
}

impl World {
    /// Validates the scenario and powers the device on at its start time.
    /// With `out` set, session WAV files are written under `out/sessions`.
    pub fn new(scenario: Scenario, out: Option<&Path>) -> Result<World, ScenarioError> {
        let config = scenario.validate()?;
        let io_err = |path: &Path| {
            let path = path.to_owned();
            move |source| ScenarioError::Io { path, source }
        };
        if let Some(dir) = out {
            let sessions = dir.join(SESSIONS_DIR);
            fs::create_dir_all(&sessions).map_err(io_err(&sessions))?;
        }
        let mut eeprom = VirtualEeprom::new();
        persist_config(&mut eeprom, &config).expect("blank EEPROM accepts a config");
        let source = SourceReader::open(&scenario.audio, config.format.sample_rate_hz)?;
        let start = scenario.start;
        let mut world = World {
            out: out.map(Path::to_owned),
            start,
            end: scenario.end(),
            now: start,
            state: DeviceState::Boot,
            config,
            eeprom,
            eeprom_fault_armed: false,
            rtc: VirtualRtc::new(start),
            alarm_fired: None,
            energy: scenario.energy.build(),
            sd: SdCardArray::new(scenario.storage.cards),
            source,
            decoder: FrameDecoder::new(),
            next_action: 0,
            jumper: scenario.jumper,
            powered: true,
            power_back_at: None,
            armed: None,
            session: None,
            abort_reason: None,
            sessions_started: 0,
            sessions_recorded: 0,
            sessions_skipped: 0,
            anomalies: 0,
            last_session: None,
            ledger: RunLedger::default(),
            outbox: Vec::new(),
            scenario,
        };
        if world.end > world.start {
            world.boot();
        }
        Ok(world)
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn end(&self) -> Timestamp {
        self.end
    }

    pub fn is_finished(&self) -> bool {
        self.now >= self.end
    }

    pub fn state(&self) -> DeviceState {
        self.state
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn energy(&self) -> &EnergyState {
        &self.energy
    }

    pub fn storage(&self) -> &SdCardArray {
        &self.sd
    }

    pub fn ledger(&self) -> &RunLedger {
        &self.ledger
    }

    pub fn records_since(&self, cursor: usize) -> &[LedgerRecord] {
        &self.ledger.records[cursor.min(self.ledger.records.len())..]
    }

    /// Response frames produced since the last call.
    pub fn take_outbox(&mut self) -> Vec<Vec<u8>> {
        std::mem::take(&mut self.outbox)
    }

    fn elapsed(&self) -> f64 {
        secs(self.now - self.start)
    }

    fn log(&mut self, entry: LedgerEntry) {
        if matches!(entry, LedgerEntry::Anomaly { .. }) {
            self.anomalies += 1;
        }
        let t = self.elapsed();
        self.ledger.push(t, entry);
    }

    fn irradiance(&self) -> f64 {
        self.scenario.irradiance_at(self.now)
    }

    fn draw_ma(&self) -> f64 {
        if self.powered {
            self.energy.draw_table.get(self.state)
        } else {
            0.0
        }
    }

    fn log_energy(&mut self) {
        let entry = LedgerEntry::Energy {
            state: self.state,
            charge_mah: self.energy.battery_charge_mah,
            percent: self.energy.percent(),
            consumed_mah: self.energy.consumed_mah,
            solar_ma: self.energy.solar_charge_current(self.irradiance()),
        };
        self.log(entry);
    }

    fn log_storage(&mut self) {
        let entry = LedgerEntry::Storage {
            used_bytes: self.sd.total_used(),
            free_bytes: self.sd.total_free(),
            active_card: self.sd.active_index(),
            card_used_bytes: self.sd.cards().iter().map(|c| c.used_bytes).collect(),
        };
        self.log(entry);
    }

    pub fn status(&self) -> StatusSnapshot {
        let cards = self
            .sd
            .cards()
            .iter()
            .enumerate()
            .map(|(index, c)| CardStatus {
                index,
                capacity_bytes: c.capacity_bytes,
                used_bytes: c.used_bytes,
                free_bytes: c.free_bytes(),
                files: c.files.len(),
            })
            .collect();
        let next_alarm = self.rtc.alarm().filter(|_| self.powered);
        StatusSnapshot {
            sim_time: self.now,
            elapsed_s: self.elapsed(),
            rtc_time: self.rtc.now(),
            state: self.state,
            powered: self.powered,
            battery: BatteryStatus {
                charge_percent: self.energy.percent(),
                charge_mah: self.energy.battery_charge_mah,
                capacity_mah: self.energy.battery_capacity_mah,
                consumed_mah: self.energy.consumed_mah,
                solar_ma: self.energy.solar_charge_current(self.irradiance()),
                draw_ma: self.draw_ma(),
            },
            storage: StorageStatus {
                active_card: self.sd.active_index(),
                total_bytes: self.sd.total_capacity(),
                used_bytes: self.sd.total_used(),
                free_bytes: self.sd.total_free(),
                cards,
            },
            next_alarm,
            next_alarm_in_s: next_alarm.map(|a| secs(a - self.rtc.now())),
            config: self.config.clone(),
            last_session: self.last_session.clone(),
            sessions_recorded: self.sessions_recorded,
            sessions_skipped: self.sessions_skipped,
            anomalies: self.anomalies,
        }
    }

    fn session_room(&self, cfg: &DeviceConfig) -> bool {
        let Ok(size) = session_file_bytes(&cfg.format, cfg.schedule.session_seconds()) else {
            return true;
        };
        let mut trial = self.sd.clone();
        (0..FILES_PER_SESSION).all(|i| trial.write_file(&format!("probe{i}"), size).is_ok())
    }

    fn context(&self) -> MachineContext {
        MachineContext {
            charge_percent: self.energy.percent(),
            battery_floor_percent: self.config.battery_floor_percent,
            storage_available: self.session_room(&self.config),
        }
    }

    // ---- time advance ----

    /// Runs the simulation up to `target` (clamped to the scenario end),
    /// handling every event on the way.
    pub fn advance_to(&mut self, target: Timestamp) {
        let target = target.min(self.end);
        loop {
            self.process_due();
            if self.now >= target {
                break;
            }
            let next = self.next_event_time().min(target);
            self.move_to(next);
        }
    }

    pub fn advance_by(&mut self, seconds: f64) {
        self.advance_to(self.now + delta_s(seconds.max(0.0)));
    }

    pub fn run_to_end(&mut self) {
        self.advance_to(self.end);
    }

    fn action_time(&self, i: usize) -> Option<Timestamp> {
        self.scenario.actions.get(i).map(|a| self.start + delta_s(a.at_s))
    }

    fn alarm_sim_time(&self) -> Option<Timestamp> {
        if !self.powered {
            return None;
        }
        self.rtc.alarm().map(|a| self.now + (a - self.rtc.now()))
    }

    fn next_event_time(&self) -> Timestamp {
        let hour = self
            .now
            .duration_trunc(TimeDelta::hours(1))
            .expect("hour truncation")
            + TimeDelta::hours(1);
        [
            Some(self.end),
            Some(hour),
            self.power_back_at,
            self.action_time(self.next_action),
            self.session.as_ref().map(ActiveSession::end_sim),
            self.alarm_sim_time(),
        ]
        .into_iter()
        .flatten()
        .filter(|&t| t > self.now)
        .min()
        .unwrap_or(self.end)
    }

    fn levels(&self) -> [(f64, BatteryLevel); 3] {
        let cap = self.energy.battery_capacity_mah;
        [
            (0.0, BatteryLevel::Empty),
            (cap * self.config.battery_floor_percent / 100.0, BatteryLevel::Floor),
            (cap * TERMINATION_FRACTION, BatteryLevel::Full),
        ]
    }

    fn move_to(&mut self, next: Timestamp) {
        let dt = secs(next - self.now);
        let all = self.levels();
        let current = self.energy.battery_charge_mah;
        let levels: Vec<(f64, BatteryLevel)> = all.into_iter().filter(|(l, _)| *l != current).collect();
        let values: Vec<f64> = levels.iter().map(|(l, _)| *l).collect();
        let draw = self.draw_ma();
        let irr = self.irradiance();
        let crossing = self.energy.integrate(dt, draw, irr, &values);
        let reached = match crossing {
            Some(c) => (self.now + delta_s(c.after_s)).clamp(self.now, next),
            None => next,
        };
        if reached > self.now {
            if let Some(at) = self.rtc.advance(reached - self.now) {
                self.alarm_fired = Some(at);
            }
            self.now = reached;
        }
        if reached == next && crossing.is_none() && self.now.duration_trunc(TimeDelta::hours(1)).ok() == Some(self.now)
        {
            self.log_energy();
        }
        if let Some(c) = crossing {
            // Coinciding levels (a zero floor) report as the lowest one.
            let level = levels
                .iter()
                .find(|(l, _)| *l == c.level_mah)
                .map(|(_, k)| *k)
                .expect("crossing level comes from the list");
            self.on_crossing(level, c.direction);
        }
    }

    fn on_crossing(&mut self, level: BatteryLevel, direction: Direction) {
        if level == BatteryLevel::Full && direction == Direction::Falling {
            return;
        }
        self.log(LedgerEntry::Battery { level, direction });
        self.log_energy();
        if !self.powered {
            return;
        }
        match (level, direction) {
            (BatteryLevel::Empty | BatteryLevel::Floor, Direction::Falling) => self.fire(Event::BatteryLow),
            (BatteryLevel::Floor, Direction::Rising) if self.state == DeviceState::LowBattery => {
                self.fire(Event::BatteryRecovered)
            }
            _ => {}
        }
    }

    fn process_due(&mut self) {
        if let Some(t) = self.power_back_at {
            if t <= self.now {
                self.power_back_at = None;
                self.powered = true;
                self.boot();
            }
        }
        while let Some(t) = self.action_time(self.next_action) {
            if t > self.now {
                break;
            }
            let kind = self.scenario.actions[self.next_action].kind.clone();
            self.next_action += 1;
            self.apply_action(kind);
        }
        if let Some(s) = &self.session {
            if s.end_sim() <= self.now && self.state == DeviceState::Recording {
                self.fire(Event::SessionDone);
            }
        }
        if let Some(at) = self.alarm_fired.take() {
            if self.powered {
                self.on_alarm(at);
            }
        }
    }

    // ---- device behaviour ----

    fn boot(&mut self) {
        self.state = DeviceState::Boot;
        self.decoder = FrameDecoder::new();
        match load_config(&self.eeprom) {
            Some(cfg) => self.config = cfg,
            None => {
                self.config = DeviceConfig::default();
                self.log(LedgerEntry::Log {
                    message: "no stored configuration; using defaults".into(),
                });
            }
        }
        self.fire(Event::Boot { jumper: self.jumper });
    }

    fn on_alarm(&mut self, at: Timestamp) {
        if self.armed.is_some_and(|e| e.wake_at != at) {
            self.armed = None;
        }
        self.fire(Event::AlarmFired);
    }

    fn fire(&mut self, event: Event) {
        let t = step(self.state, event, &self.context());
        self.state = t.to;
        let at = self.now;
        self.log(transition_entry(at, &t));
        self.log_energy();

        let mut follow = None;
        for action in &t.actions {
            match action {
                Action::EnterConfigMode => {
                    self.rtc.clear_alarm();
                    self.armed = None;
                }
                Action::ApplyConfig | Action::ResetConfig => {}
                Action::ArmNextAlarm => self.arm(),
                Action::StartSession => self.start_session(),
                Action::SkipSession => {
                    self.sessions_skipped += 1;
                    let reason = if t.to == DeviceState::StorageFull {
                        "storage full"
                    } else {
                        "battery below floor"
                    };
                    let wake_at = self.armed.take().map(|e| e.wake_at);
                    self.log(LedgerEntry::SessionSkipped {
                        wake_at,
                        reason: reason.into(),
                    });
                }
                Action::AbortSession => self.abort_reason = Some(t.event.name().to_owned()),
                Action::FinalizeFiles => follow = self.finalize_session(),
                Action::Log(message) => self.log(LedgerEntry::Log {
                    message: message.clone(),
                }),
                Action::Anomaly(message) => self.log(LedgerEntry::Anomaly {
                    message: message.clone(),
                }),
            }
        }
        if let Some(reason) = self.abort_reason.take() {
            self.discard_session(&reason);
        }

        if let Some(e) = follow {
            self.fire(e);
        } else if self.state == DeviceState::Writing {
            self.fire(Event::SessionDone);
        }
    }

    fn arm(&mut self) {
        match next_wake(&self.config.schedule, self.rtc.now()) {
            Some(entry) => {
                self.rtc.set_alarm(entry.wake_at).expect("next wake lies in the future");
                self.armed = Some(entry);
            }
            None => {
                self.rtc.clear_alarm();
                self.armed = None;
                self.log(LedgerEntry::Anomaly {
                    message: "schedule has no sessions; no alarm armed".into(),
                });
            }
        }
    }

    fn start_session(&mut self) {
        let planned_s = self
            .armed
            .take()
            .map(|e| e.duration_s)
            .unwrap_or_else(|| self.config.schedule.session_seconds());
        self.session = Some(ActiveSession {
            start_sim: self.now,
            start_rtc: self.rtc.now(),
            planned_s,
            consumed_at_start: self.energy.consumed_mah,
            config: self.config.clone(),
            index: self.sessions_started,
        });
        self.sessions_started += 1;
    }

    fn latency_for(&self, index: u64) -> WriterLatencyModel {
        let base = self.scenario.writer;
        WriterLatencyModel {
            seed: base.seed
                ^ self.scenario.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03),
            ..base
        }
    }

    /// Drops an unfinished session without files.
    fn discard_session(&mut self, reason: &str) {
        let Some(s) = self.session.take() else {
            return;
        };
        let record = SessionRecord {
            start: s.start_rtc,
            planned_s: s.planned_s as f64,
            duration_s: secs(self.now - s.start_sim),
            aborted: Some(reason.to_owned()),
            stored: false,
            dropped_halves: 0,
            energy_mah: self.energy.consumed_mah - s.consumed_at_start,
            files: Vec::new(),
        };
        self.log(LedgerEntry::Session(record.clone()));
        self.last_session = Some(record);
    }

    /// Captures the session up to now and commits its two files. Returns
    /// `StorageFull` when the files do not fit or no further session will.
    fn finalize_session(&mut self) -> Option<Event> {
        let s = self.session.take()?;
        let aborted = self.abort_reason.take();
        let elapsed = secs(self.now - s.start_sim).min(s.planned_s as f64);
        let cfg = &s.config;
        let spec = SessionSpec::from_config(cfg, s.start_rtc, elapsed, self.latency_for(s.index));
        let dsp = cfg.bandpass.enabled || cfg.silence_gate.enabled;
        let materialize = self.scenario.materialize_audio && self.out.is_some();

        let names: [String; FILES_PER_SESSION] = std::array::from_fn(|i| session_file_name(s.start_rtc, i));
        let dir = self.out.as_ref().map(|d| d.join(SESSIONS_DIR));
        let part = |name: &str| dir.as_ref().map(|d| d.join(format!(".{name}.part")));
        let sinks: io::Result<Vec<Sink>> = names
            .iter()
            .map(|n| match (materialize, part(n)) {
                (true, Some(p)) => File::create(p).map(|f| Sink::File(BufWriter::new(f))),
                _ => Ok(Sink::Count(CountingSink::default())),
            })
            .collect();
        let outcome = sinks.map_err(|e| e.to_string()).and_then(|sinks| {
            let sinks: [Sink; FILES_PER_SESSION] = sinks.try_into().ok().expect("two sinks");
            let frame = frames_for(secs(s.start_sim - self.start), cfg.format.sample_rate_hz);
            let capture = if materialize || dsp {
                self.source.seek(frame);
                Capture::Audio(&mut self.source)
            } else {
                Capture::Accounting
            };
            let (rec, sinks) = run_session(&spec, capture, sinks).map_err(|e| e.to_string())?;
            for sink in sinks {
                if let Sink::File(mut f) = sink {
                    f.flush().map_err(|e| e.to_string())?;
                }
            }
            Ok(rec)
        });

        let energy_mah = self.energy.consumed_mah - s.consumed_at_start;
        let mut follow = None;
        let record = match outcome {
            Err(e) => {
                self.cleanup_parts(&names);
                self.log(LedgerEntry::Anomaly {
                    message: format!("session capture failed: {e}"),
                });
                SessionRecord {
                    start: s.start_rtc,
                    planned_s: s.planned_s as f64,
                    duration_s: elapsed,
                    aborted: Some(aborted.unwrap_or_else(|| "capture_failed".into())),
                    stored: false,
                    dropped_halves: 0,
                    energy_mah,
                    files: Vec::new(),
                }
            }
            Ok(rec) => {
                let placements = store_session(&rec, &mut self.sd);
                let stored = placements.is_ok();
                let cards = match &placements {
                    Ok(p) => p.iter().map(|p| Some(p.card)).collect(),
                    Err(_) => vec![None; FILES_PER_SESSION],
                };
                match &placements {
                    Ok(_) => {
                        if materialize {
                            self.commit_parts(&names);
                        }
                        self.sessions_recorded += 1;
                    }
                    Err(e) => {
                        self.cleanup_parts(&names);
                        self.log(LedgerEntry::Anomaly {
                            message: format!("session files not stored: {e}"),
                        });
                        follow = Some(Event::StorageFull);
                    }
                }
                SessionRecord {
                    start: rec.start,
                    planned_s: s.planned_s as f64,
                    duration_s: rec.duration_s,
                    aborted,
                    stored,
                    dropped_halves: rec.dropped_halves,
                    energy_mah,
                    files: rec
                        .files
                        .iter()
                        .zip(cards)
                        .map(|(f, card)| FileRecord {
                            name: f.name.clone(),
                            size_bytes: f.size_bytes,
                            data_bytes: f.data_bytes,
                            dropped_halves: f.dropped_halves,
                            card,
                            kept_regions: f.kept_regions.clone(),
                        })
                        .collect(),
                }
            }
        };
        self.log(LedgerEntry::Session(record.clone()));
        self.last_session = Some(record);
        if record_stored(&self.last_session) {
            self.log_storage();
            if follow.is_none() && !self.session_room(&self.config) {
                follow = Some(Event::StorageFull);
            }
        }
        follow
    }

    fn commit_parts(&mut self, names: &[String]) {
        let Some(dir) = self.out.as_ref().map(|d| d.join(SESSIONS_DIR)) else {
            return;
        };
        for n in names {
            if let Err(e) = fs::rename(dir.join(format!(".{n}.part")), dir.join(n)) {
                self.log(LedgerEntry::Anomaly {
                    message: format!("cannot move {n} into place: {e}"),
                });
            }
        }
    }

    fn cleanup_parts(&self, names: &[String]) {
        if let Some(dir) = self.out.as_ref().map(|d| d.join(SESSIONS_DIR)) {
            for n in names {
                let _ = fs::remove_file(dir.join(format!(".{n}.part")));
            }
        }
    }

    /// Applies a scenario action immediately, at the current virtual time.
    pub fn apply_action(&mut self, kind: ActionKind) {
        match kind {
            ActionKind::Packet { frame_hex } => {
                match hex::decode(frame_hex.replace(char::is_whitespace, "")) {
                    Ok(bytes) => self.receive_bytes(&bytes),
                    Err(e) => self.log(LedgerEntry::Anomaly {
                        message: format!("packet action with bad hex: {e}"),
                    }),
                }
            }
            ActionKind::PowerCut { off_s } => self.power_cut(off_s),
            ActionKind::EepromFault { after_bytes } => {
                self.eeprom.cut_power_after(after_bytes);
                self.eeprom_fault_armed = true;
            }
            ActionKind::ModeSwitch { jumper } => {
                self.jumper = jumper;
                if !jumper && self.powered && self.state == DeviceState::ConfigMode {
                    self.fire(Event::ConfigReceived { enter_recording: true });
                }
            }
        }
    }

    fn power_cut(&mut self, off_s: f64) {
        self.log(LedgerEntry::PowerCut { off_s });
        if self.session.is_some() {
            self.discard_session("power_cut");
            self.log(LedgerEntry::Anomaly {
                message: "recording lost to power cut".into(),
            });
        }
        self.rtc.clear_alarm();
        self.armed = None;
        self.alarm_fired = None;
        self.powered = false;
        self.state = DeviceState::Boot;
        self.power_back_at = Some(self.now + delta_s(off_s));
        if off_s <= 0.0 {
            self.power_back_at = None;
            self.powered = true;
            self.boot();
        }
    }

    /// Feeds raw link bytes to the device, at the current virtual time.
    /// Response frames are collected in the outbox.
    pub fn receive_bytes(&mut self, bytes: &[u8]) {
        if !self.powered {
            self.log(LedgerEntry::Log {
                message: format!("{} link bytes dropped while powered off", bytes.len()),
            });
            return;
        }
        self.decoder.push(bytes);
        while let Some(ev) = self.decoder.next_event() {
            match ev {
                StreamEvent::Packet(p) => self.handle_packet(&p),
                StreamEvent::Corrupt { offset, fault } => self.log(LedgerEntry::FrameFault { offset, fault }),
            }
            if !self.powered || self.state == DeviceState::Boot {
                break;
            }
        }
    }

    fn handle_packet(&mut self, packet: &ConfigPacket) {
        let status = (packet.id == id::QUERY_STATUS).then(|| self.status().compact_json());
        let outcome = apply_packet(&mut self.config, &mut self.eeprom, self.state, packet, |_| {
            status.unwrap_or_default()
        });
        let brownout = self.eeprom_fault_armed
            && matches!(outcome.response, Response::Nack { code: NackCode::Storage, .. });
        self.log(LedgerEntry::Packet {
            id: packet.id,
            response: outcome.response.clone(),
        });
        if brownout {
            self.eeprom_fault_armed = false;
            self.eeprom.restore_power();
            self.log(LedgerEntry::Anomaly {
                message: "supply lost during EEPROM write".into(),
            });
            self.power_cut(0.0);
            return;
        }
        self.outbox.push(outcome.response.to_frame());
        match outcome.effect {
            Some(Effect::ConfigApplied) => self.fire(Event::ConfigReceived { enter_recording: false }),
            Some(Effect::RtcSet { at }) => {
                self.rtc.set_time(at);
                self.armed = None;
                self.fire(Event::ConfigReceived { enter_recording: false });
            }
            Some(Effect::ForcedSleep) => self.fire(Event::ForcedSleep),
            Some(Effect::FactoryReset) => self.fire(Event::FactoryReset),
            Some(Effect::StatusQueried) | None => {}
        }
    }

    /// Ends the run: a recording still in progress is cut at the end time
    /// and kept, and the ledger and logs are written to the output
    /// directory if there is one.
    pub fn finish(mut self) -> Result<RunLedger, ScenarioError> {
        self.run_to_end();
        self.conclude("scenario_end")
    }

    /// Ends the run at the current virtual time instead of the scenario
    /// end; a recording in progress is kept with aborted = "stopped".
    pub fn close(self) -> Result<RunLedger, ScenarioError> {
        self.conclude("stopped")
    }

    fn conclude(mut self, reason: &str) -> Result<RunLedger, ScenarioError> {
        if self.session.is_some() {
            self.abort_reason = Some(reason.into());
            self.finalize_session();
        }
        if let Some(dir) = &self.out {
            let write = |name: &str, text: String| {
                let path = dir.join(name);
                fs::write(&path, text).map_err(|source| ScenarioError::Io { path, source })
            };
            write(LEDGER_FILE, self.ledger.to_jsonl())?;
            write(TRANSITIONS_FILE, self.ledger.transitions_log())?;
            write(GATE_SIDECAR_FILE, self.ledger.gate_sidecar())?;
        }
        Ok(self.ledger)
    }
}

fn record_stored(r: &Option<SessionRecord>) -> bool {
    r.as_ref().is_some_and(|r| r.stored)
}

/// Runs a scenario to completion.
pub fn run_scenario(scenario: Scenario, out: Option<&Path>) -> Result<RunLedger, ScenarioError> {
    World::new(scenario, out)?.finish()
}
