use std::fs;
use std::path::Path;

use aru_core::protocol::Profile;
use aru_core::scheduler::plan_for;
use aru_core::sim::{run_scenario, Scenario};
use aru_core::{bytes_per_second, capacity_files, session_file_bytes};
use chrono::NaiveDate;

use crate::error::CliError;

pub fn load_profile(path: &Path) -> Result<Profile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Profile::import(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn run(scenario: &Path, out: &Path) -> Result<(), CliError> {
    let scenario = Scenario::load(scenario)?;
    let ledger = run_scenario(scenario, Some(out))?;
    let sessions = ledger.sessions().count();
    let files: usize = ledger.sessions().filter(|s| s.stored).map(|s| s.files.len()).sum();
    let dropped: u64 = ledger.sessions().map(|s| s.dropped_halves).sum();
    println!(
        "{} records, {sessions} sessions, {files} files, {dropped} dropped halves, {} anomalies -> {}",
        ledger.records.len(),
        ledger.anomalies().count(),
        out.display()
    );
    Ok(())
}

pub fn plan(profile: &Path, date: NaiveDate) -> Result<(), CliError> {
    let profile = load_profile(profile)?;
    let plan = plan_for(&profile.config.schedule, date).map_err(|e| CliError::invalid(e.to_string()))?;
    for e in &plan.entries {
        println!(
            "{}  {}  {} s",
            e.wake_at.format("%Y-%m-%dT%H:%M:%S"),
            e.end().format("%Y-%m-%dT%H:%M:%S"),
            e.duration_s
        );
    }
    Ok(())
}

pub fn capacity(profile: &Path, card_bytes: u64, overhead: f64) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&overhead) {
        return Err(CliError::usage(format!("overhead must be in [0, 1), got {overhead}")));
    }
    let profile = load_profile(profile)?;
    let cfg = &profile.config;
    let fmt = &cfg.format;
    let seconds = cfg.schedule.session_seconds();
    let per_file = session_file_bytes(fmt, seconds).map_err(|e| CliError::invalid(e.to_string()))?;
    let files = capacity_files(card_bytes, fmt, seconds, overhead).map_err(|e| CliError::invalid(e.to_string()))?;
    let usable = (card_bytes as f64 * (1.0 - overhead)).floor() as u64;
    println!(
        "format:   {} Hz, {}-bit, {} ch per file = {} B/s",
        fmt.sample_rate_hz,
        fmt.bit_depth,
        fmt.channels_per_file,
        group(bytes_per_second(fmt))
    );
    println!("file:     {seconds} s -> {} B (44 B header)", group(per_file));
    println!(
        "storage:  {} B x (1 - {overhead}) = {} B usable",
        group(card_bytes),
        group(usable)
    );
    println!("capacity: {} files ({} sessions of two files)", group(files), group(files / 2));
    Ok(())
}

pub fn profile_validate(file: &Path) -> Result<(), CliError> {
    let profile = load_profile(file)?;
    let name = if profile.name.is_empty() { "(unnamed)" } else { &profile.name };
    print!("ok: {name}");
    if !profile.extra.is_empty() {
        let keys: Vec<_> = profile.extra.keys().map(String::as_str).collect();
        print!(" (unknown keys kept: {})", keys.join(", "));
    }
    println!();
    Ok(())
}

/// Thousands separators: 1092 -> "1,092".
pub fn group(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}
