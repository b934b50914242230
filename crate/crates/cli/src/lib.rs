//! Command-line front end and HTTP service for the recorder simulator.

pub mod commands;
pub mod error;
pub mod render;
pub mod service;

use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

pub use error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "aru", version, about = "Autonomous recording unit simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file and write its outputs to a directory.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the wake plan a profile produces for one day.
    Plan {
        profile: PathBuf,
        #[arg(long)]
        date: NaiveDate,
    },
    /// Print how many session files fit on the cards under a profile.
    Capacity {
        profile: PathBuf,
        /// Total bytes across all cards.
        #[arg(long, default_value_t = aru_core::model::DEFAULT_TOTAL_STORAGE_BYTES)]
        card_bytes: u64,
        /// Fraction of raw capacity lost to the filesystem.
        #[arg(long, default_value_t = aru_core::model::DEFAULT_FS_OVERHEAD)]
        overhead: f64,
    },
    /// Render a WAV file's spectrogram as a PNG.
    Spectrogram {
        wav: PathBuf,
        #[arg(long)]
        png: PathBuf,
        #[arg(long, default_value_t = 1024)]
        window: usize,
        /// Defaults to half the window.
        #[arg(long)]
        hop: Option<usize>,
        #[arg(long, default_value_t = 0)]
        channel: u16,
        /// Widest image to produce; columns are averaged down to fit.
        #[arg(long, default_value_t = 2048)]
        max_width: usize,
        /// Magnitudes below this many dBFS render black.
        #[arg(long, default_value_t = -100.0, allow_negative_numbers = true)]
        floor_db: f64,
    },
    /// Serve the status, packet and event endpoints over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Scenario to host; defaults to an idle device in config mode.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Directory for session WAVs and logs, written on shutdown.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Virtual seconds per wall-clock second; without it time moves
        /// only through POST /api/advance.
        #[arg(long)]
        realtime_factor: Option<f64>,
    },
    /// Profile utilities.
    Profile {
        #[command(subcommand)]
        command: ProfileCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProfileCommand {
    /// Check a JSON profile and report every violation.
    Validate { file: PathBuf },
    /// Print the default profile.
    Default {
        #[arg(long, default_value = "default")]
        name: String,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, out } => commands::run(&scenario, &out),
        Command::Plan { profile, date } => commands::plan(&profile, date),
        Command::Capacity {
            profile,
            card_bytes,
            overhead,
        } => commands::capacity(&profile, card_bytes, overhead),
        Command::Spectrogram {
            wav,
            png,
            window,
            hop,
            channel,
            max_width,
            floor_db,
        } => render::spectrogram_png(
            &wav,
            &png,
            &render::RenderOptions {
                window,
                hop: hop.unwrap_or(window / 2),
                channel,
                max_width,
                floor_db,
            },
        ),
        Command::Serve {
            port,
            host,
            scenario,
            out,
            realtime_factor,
        } => service::serve(service::ServeOptions {
            host,
            port,
            scenario,
            out,
            realtime_factor,
        }),
        Command::Profile { command } => match command {
            ProfileCommand::Validate { file } => commands::profile_validate(&file),
            ProfileCommand::Default { name } => {
                print!("{}", aru_core::protocol::profile_export(&Default::default(), &name));
                Ok(())
            }
        },
    }
}
