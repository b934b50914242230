use std::fmt;
use std::path::Path;

use aru_core::hw::audio::AudioError;
use aru_core::sim::ScenarioError;

/// Process exit codes. Clap itself exits with 2 on bad flags.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const INVALID: u8 = 4;
}

/// A one-line diagnostic plus the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn failure(message: impl Into<String>) -> Self {
        Self { code: exit::FAILURE, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: exit::USAGE, message: message.into() }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self { code: exit::INVALID, message: message.into() }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self { code: exit::IO, message: format!("{}: {err}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        let code = match &e {
            ScenarioError::Io { .. } | ScenarioError::Audio(AudioError::File { .. }) => exit::IO,
            _ => exit::INVALID,
        };
        Self { code, message: e.to_string() }
    }
}
