use std::fs;
use std::path::Path;

use aru_core::model::DeviceState;
use aru_core::protocol::{encode_packet, Command, FrameDecoder, NackCode, Response, StreamEvent};
use aru_core::sim::{run_scenario, BatteryLevel, LedgerEntry, RunLedger, Scenario, World, LEDGER_FILE};
use aru_core::GainSettings;

const DAILY_24H: &str = r#"
seed = 1
start = "2025-06-01T00:00:00"
duration_s = 86400
materialize_audio = false
"#;

fn scenario(text: &str) -> Scenario {
    Scenario::from_toml(text).unwrap()
}

fn hourly(minutes: u32, extra: &str) -> String {
    format!(
        r#"
seed = 3
start = "2025-06-01T00:00:00"
duration_s = 14400
materialize_audio = false
{extra}
[config.schedule]
mode = "hourly"
wake_times = ["00:30", "01:30", "02:30", "03:30"]
session_minutes = {minutes}
"#
    )
}

fn frame(cmd: &Command) -> String {
    hex::encode(cmd.to_frame().unwrap())
}

/// Time spent in each state, from the transition log alone.
fn draw_integral_mah(ledger: &RunLedger, end_s: f64, recording_ma: f64, idle_ma: f64) -> f64 {
    let mut state = DeviceState::Boot;
    let mut since = 0.0;
    let mut mah = 0.0;
    let ma = |s: DeviceState| if s == DeviceState::Recording { recording_ma } else { idle_ma };
    for (rec, _, to) in ledger.transitions() {
        mah += ma(state) * (rec.t_s - since) / 3600.0;
        state = to;
        since = rec.t_s;
    }
    mah + ma(state) * (end_s - since) / 3600.0
}

fn final_consumed(ledger: &RunLedger) -> f64 {
    ledger
        .records
        .iter()
        .rev()
        .find_map(|r| match &r.entry {
            LedgerEntry::Energy { consumed_mah, .. } => Some(*consumed_mah),
            _ => None,
        })
        .unwrap()
}

#[test]
fn daily_day_records_thirteen_sessions_and_sleeps() {
    let mut world = World::new(scenario(DAILY_24H), None).unwrap();
    world.run_to_end();
    assert_eq!(world.state(), DeviceState::Sleep);
    let consumed = world.energy().consumed_mah;
    let ledger = world.finish().unwrap();

    let sessions: Vec<_> = ledger.sessions().collect();
    assert_eq!(sessions.len(), 13);
    assert!(sessions.iter().all(|s| s.stored && s.aborted.is_none() && s.duration_s == 600.0));
    assert_eq!(sessions.iter().map(|s| s.files.len()).sum::<usize>(), 26);
    assert_eq!(sessions[0].start.format("%H:%M").to_string(), "06:00");
    assert_eq!(sessions[12].start.format("%H:%M").to_string(), "18:00");

    let recording: f64 = sessions.iter().map(|s| s.energy_mah).sum();
    let oracle_rec = 13.0 * (1.0 / 6.0) * 200.0;
    assert!((recording - oracle_rec).abs() / oracle_rec < 1e-3, "{recording}");

    let oracle = 13.0 * (1.0 / 6.0) * 200.0 + (24.0 - 13.0 / 6.0) * 179.0;
    assert!((consumed - oracle).abs() / oracle < 1e-3, "{consumed} vs {oracle}");
    assert!((final_consumed(&ledger) - consumed).abs() < 1e-9);
    assert_eq!(ledger.anomalies().count(), 0);
}

#[test]
fn energy_trace_matches_draw_over_transitions() {
    let text = hourly(20, "");
    let ledger = run_scenario(scenario(&text), None).unwrap();
    let integral = draw_integral_mah(&ledger, 14400.0, 200.0, 179.0);
    let consumed = final_consumed(&ledger);
    assert!((integral - consumed).abs() / consumed < 1e-3, "{integral} vs {consumed}");
}

#[test]
fn zero_duration_gives_empty_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("start = \"2025-06-01T00:00:00\"\nduration_s = 0\n");
    let ledger = run_scenario(s, Some(dir.path())).unwrap();
    assert!(ledger.is_empty());
    assert_eq!(fs::read_to_string(dir.path().join(LEDGER_FILE)).unwrap(), "");
}

#[test]
fn slow_writer_drops_in_every_session() {
    let text = hourly(1, "[writer]\nper_half_write_time_s = 0.015\n");
    let ledger = run_scenario(scenario(&text), None).unwrap();
    let sessions: Vec<_> = ledger.sessions().collect();
    assert_eq!(sessions.len(), 4);
    assert!(sessions.iter().all(|s| s.dropped_halves > 0));

    let fast = run_scenario(scenario(&hourly(1, "")), None).unwrap();
    assert!(fast.sessions().all(|s| s.dropped_halves == 0));
}

#[test]
fn status_after_one_session() {
    let mut world = World::new(scenario(DAILY_24H), None).unwrap();
    assert_eq!(world.status().battery.charge_percent, 100.0);
    assert_eq!(world.status().state, DeviceState::Sleep);
    world.advance_by(6.0 * 3600.0 + 601.0);
    let st = world.status();
    assert_eq!(st.state, DeviceState::Sleep);
    assert_eq!(st.storage.cards[st.storage.active_card].used_bytes, 230_400_088);
    assert_eq!(st.last_session.as_ref().unwrap().files.len(), 2);
    assert_eq!(st.next_alarm.unwrap().format("%H:%M").to_string(), "07:00");
    assert_eq!(st.sessions_recorded, 1);
}

#[test]
fn storage_exhaustion_ends_in_storage_full() {
    let file = 44 + 192_000 * 60;
    let text = hourly(1, &format!("[storage]\ncards = [{0}, {0}, {0}, {1}]\n", 2 * file, 2 * file + 10));
    let mut world = World::new(scenario(&text), None).unwrap();
    world.run_to_end();
    let st = world.status();
    assert_eq!(st.state, DeviceState::StorageFull);
    assert_eq!(st.storage.cards[..3].iter().map(|c| c.free_bytes).sum::<u64>(), 0);
    assert_eq!(st.storage.free_bytes, 10);
    let ledger = world.finish().unwrap();
    assert_eq!(ledger.sessions().filter(|s| s.stored).count(), 4);
}

#[test]
fn exhausting_storage_exactly_leaves_zero_free() {
    let file = 44 + 192_000 * 60;
    let text = hourly(1, &format!("[storage]\ncards = [{0}, {0}, {0}, {0}]\n", 2 * file));
    let mut world = World::new(scenario(&text), None).unwrap();
    world.run_to_end();
    let st = world.status();
    assert_eq!(st.state, DeviceState::StorageFull);
    assert_eq!(st.storage.free_bytes, 0);
}

#[test]
fn full_cards_refuse_the_next_session() {
    let file = 44 + 192_000 * 60;
    // Room for one session only; the unlucky remainder is too small.
    let text = hourly(1, &format!("[storage]\ncards = [{}, 1, 1, 1]\n", 3 * file));
    let mut world = World::new(scenario(&text), None).unwrap();
    world.run_to_end();
    assert_eq!(world.state(), DeviceState::StorageFull);
    let ledger = world.finish().unwrap();
    assert_eq!(ledger.sessions().count(), 1);
    let last = ledger.transitions().last().unwrap();
    assert_eq!((last.1, last.2), (DeviceState::Writing, DeviceState::StorageFull));
    assert_eq!(last.0.t_s, 1860.0);
}

#[test]
fn storage_ledger_equals_emitted_files() {
    let dir = tempfile::tempdir().unwrap();
    let text = hourly(1, "").replace("materialize_audio = false", "materialize_audio = true")
        + "[audio]\nkind = \"noise\"\namplitude = 0.2\nseed = 5\n";
    let mut world = World::new(scenario(&text), Some(dir.path())).unwrap();
    world.run_to_end();
    let used = world.storage().total_used();
    let ledger = world.finish().unwrap();
    let listed: u64 = ledger.sessions().flat_map(|s| &s.files).map(|f| f.size_bytes).sum();
    let on_disk: u64 = fs::read_dir(dir.path().join("sessions"))
        .unwrap()
        .map(|e| e.unwrap().metadata().unwrap().len())
        .sum();
    assert_eq!(used, listed);
    assert_eq!(on_disk, listed);
    assert_eq!(fs::read_dir(dir.path().join("sessions")).unwrap().count(), 8);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn replays_are_byte_identical() {
    let text = hourly(1, "[writer]\nper_half_write_time_s = 0.0104\njitter_s = 0.0008\nseed = 9\n")
        .replace("materialize_audio = false", "materialize_audio = true")
        + "[audio]\nkind = \"noise\"\namplitude = 0.3\nseed = 11\n";
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(scenario(&text), Some(a.path())).unwrap();
    run_scenario(scenario(&text), Some(b.path())).unwrap();
    let (da, db) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(da.len(), 11);
    assert!(da == db);
}

#[test]
fn idle_battery_runs_out_after_58_hours() {
    let text = "start = \"2025-06-01T00:00:00\"\nduration_s = 259200\njumper = true\nmaterialize_audio = false\n";
    let ledger = run_scenario(scenario(text), None).unwrap();
    let empty = ledger
        .records
        .iter()
        .find(|r| matches!(r.entry, LedgerEntry::Battery { level: BatteryLevel::Empty, .. }))
        .unwrap();
    let hours = empty.t_s / 3600.0;
    assert!((hours - 10_400.0 / 179.0).abs() < 1e-6);
    assert!((hours - 58.1).abs() < 0.1, "{hours}");
}

#[test]
fn low_battery_skips_and_solar_recovers() {
    let text = r#"
start = "2025-06-01T00:00:00"
duration_s = 86400
materialize_audio = false
irradiance = [0,0,0,0,0,0,0,0,0,0,1,1,1,1,0,0,0,0,0,0,0,0,0,0]
[energy]
initial_charge_percent = 12
"#;
    let mut world = World::new(scenario(text), None).unwrap();
    world.run_to_end();
    let ledger = world.finish().unwrap();
    let skipped = ledger
        .records
        .iter()
        .filter(|r| matches!(r.entry, LedgerEntry::SessionSkipped { .. }))
        .count();
    assert!(skipped > 0);
    let recovered = ledger.transitions().any(|(_, from, to)| from == DeviceState::LowBattery && to == DeviceState::Sleep);
    assert!(recovered);
    assert!(ledger.sessions().count() > 0);
}

fn config_mode_world(extra: &str) -> World {
    let text = format!("start = \"2025-06-01T00:00:00\"\nduration_s = 86400\njumper = true\nmaterialize_audio = false\n{extra}");
    World::new(scenario(&text), None).unwrap()
}

fn responses(world: &mut World) -> Vec<Response> {
    let mut d = FrameDecoder::new();
    for f in world.take_outbox() {
        d.push(&f);
    }
    d.drain_events()
        .into_iter()
        .map(|e| match e {
            StreamEvent::Packet(p) => Response::parse(&p).unwrap(),
            other => panic!("{other:?}"),
        })
        .collect()
}

#[test]
fn configuring_over_the_link_then_recording() {
    let mut world = config_mode_world("");
    assert_eq!(world.state(), DeviceState::ConfigMode);
    let gains = GainSettings {
        pga_gain_db: 6.0,
        preamp_gain_db: 20.0,
    };
    world.receive_bytes(&Command::SetGains(gains).to_frame().unwrap());
    world.receive_bytes(&Command::QueryStatus.to_frame().unwrap());
    let r = responses(&mut world);
    assert_eq!(r[0], Response::Ack { request_id: 0x02 });
    let Response::Status { json } = &r[1] else { panic!("{r:?}") };
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(v["state"], "config_mode");
    assert_eq!(world.config().gains, gains);

    world.receive_bytes(&Command::ForcedSleep.to_frame().unwrap());
    assert_eq!(world.state(), DeviceState::Sleep);
    assert_eq!(responses(&mut world), vec![Response::Ack { request_id: 0x07 }]);
    world.advance_by(6.0 * 3600.0 + 1.0);
    assert_eq!(world.state(), DeviceState::Recording);

    world.receive_bytes(&Command::SetGains(GainSettings::default()).to_frame().unwrap());
    let r = responses(&mut world);
    assert!(matches!(r[0], Response::Nack { code: NackCode::WrongMode, .. }), "{r:?}");
    assert_eq!(world.config().gains, gains);

    world.advance_by(59.0);
    world.receive_bytes(&Command::ForcedSleep.to_frame().unwrap());
    assert_eq!(world.state(), DeviceState::Sleep);
    let last = world.status().last_session.unwrap();
    assert_eq!(last.aborted.as_deref(), Some("forced_sleep"));
    assert!(last.stored);
    assert_eq!(last.duration_s, 60.0);
    assert_eq!(last.files[0].size_bytes, 44 + 60 * 192_000);
}

#[test]
fn scripted_packets_and_mode_switch() {
    let set = Command::SetAudioFormat {
        sample_rate_hz: 96_000,
        bit_depth: 24,
    };
    let extra = format!(
        "[[actions]]\nat_s = 10\nkind = \"packet\"\nframe_hex = \"00ff{}\"\n\n[[actions]]\nat_s = 20\nkind = \"mode_switch\"\njumper = false\n",
        frame(&set)
    );
    let mut world = config_mode_world(&extra);
    world.advance_by(30.0);
    assert_eq!(world.state(), DeviceState::Sleep);
    assert_eq!(world.config().format.sample_rate_hz, 96_000);
    let ledger = world.finish().unwrap();
    assert!(ledger.records.iter().any(|r| matches!(r.entry, LedgerEntry::Packet { id: 0x01, .. })));
    assert!(ledger.sessions().all(|s| s.files[0].size_bytes == 44 + 600 * 96_000 * 6));
}

#[test]
fn power_cut_loses_the_recording_and_reboots() {
    let text = format!("{DAILY_24H}\n[[actions]]\nat_s = 21900\nkind = \"power_cut\"\noff_s = 60\n");
    let mut world = World::new(scenario(&text), None).unwrap();
    world.advance_by(21_930.0);
    assert!(!world.status().powered);
    world.advance_by(60.0);
    assert!(world.status().powered);
    assert_eq!(world.state(), DeviceState::Sleep);
    let ledger = world.finish().unwrap();
    let sessions: Vec<_> = ledger.sessions().collect();
    assert_eq!(sessions[0].aborted.as_deref(), Some("power_cut"));
    assert!(!sessions[0].stored);
    assert_eq!(sessions.iter().filter(|s| s.stored).count(), 12);
}

#[test]
fn eeprom_brownout_keeps_old_or_new_config() {
    let set = Command::SetAudioFormat {
        sample_rate_hz: 96_000,
        bit_depth: 16,
    };
    for budget in [0usize, 1, 5, 40, 500] {
        let extra = format!(
            "[[actions]]\nat_s = 5\nkind = \"eeprom_fault\"\nafter_bytes = {budget}\n\n[[actions]]\nat_s = 10\nkind = \"packet\"\nframe_hex = \"{}\"\n",
            frame(&set)
        );
        let mut world = config_mode_world(&extra);
        world.advance_by(11.0);
        let rate = world.config().format.sample_rate_hz;
        assert!(rate == 48_000 || rate == 96_000, "budget {budget}");
        assert_eq!(world.state(), DeviceState::ConfigMode);
        let ledger = world.finish().unwrap();
        let cut = ledger.records.iter().any(|r| matches!(r.entry, LedgerEntry::PowerCut { .. }));
        assert_eq!(cut, budget < 500, "budget {budget}");
    }
}

#[test]
fn corrupt_frames_are_logged() {
    let mut bytes = Command::QueryStatus.to_frame().unwrap();
    bytes[4] ^= 0xFF;
    let extra = format!("[[actions]]\nat_s = 1\nkind = \"packet\"\nframe_hex = \"{}\"\n", hex::encode(&bytes));
    let mut world = config_mode_world(&extra);
    world.advance_by(2.0);
    let ledger = world.finish().unwrap();
    assert!(ledger.records.iter().any(|r| matches!(r.entry, LedgerEntry::FrameFault { .. })));
    let _ = encode_packet(1, &[]);
}

#[test]
fn ledger_round_trips_through_jsonl() {
    let ledger = run_scenario(scenario(&hourly(1, "")), None).unwrap();
    let text = ledger.to_jsonl();
    assert_eq!(RunLedger::from_jsonl(&text).unwrap(), ledger);
    let line = ledger.transitions_log().lines().next().unwrap().to_owned();
    assert_eq!(line, "2025-06-01T00:00:00.000 | boot | boot(jumper=false) | sleep | arm_next_alarm");
}
