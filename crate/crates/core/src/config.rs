//! Config plumbing shared by every command: TOML parsing with strict
//! keys, canonical config hashing, and output-directory manifests.
//!
//! The hash covers the canonical JSON form of a config value, so a config
//! written out and re-parsed hashes identically, and any field change
//! shows up in every artifact stamped with the hash.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::util::sha256_hex;
use crate::{Error, Result};

/// Digest of a config's canonical serialization.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| Error::Serde(e.to_string()))?;
    Ok(sha256_hex(&bytes))
}

/// Parse a strict-keys TOML document.
pub fn from_toml_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))
}

/// Read and parse a TOML config file; errors name the file.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    from_toml_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Serialize a config back to TOML, as `--dump-config` emits it.
pub fn to_toml_string<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance stamp written into every output directory: enough to re-run
/// the command that filled it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// Subcommand name plus its salient arguments.
    pub command: String,
    pub config_hash: String,
    /// Tool version the artifacts came from.
    pub version: String,
    pub started_unix: u64,
    pub started_utc: String,
    pub finished_unix: Option<u64>,
    pub finished_utc: Option<String>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// `seconds` since the epoch as `YYYY-MM-DD HH:MM:SS` UTC.
pub fn utc_string(seconds: u64) -> String {
    let days = (seconds / 86_400) as i64;
    let rem = seconds % 86_400;
    // Civil-from-days: shift the epoch to 0000-03-01 so leap days land at
    // the end of the 400-year cycle.
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!(
        "{year:04}-{month:02}-{day:02} {:02}:{:02}:{:02}",
        rem / 3600,
        rem % 3600 / 60,
        rem % 60
    )
}

impl Manifest {
    /// Stamp the start of a run.
    pub fn new(command: impl Into<String>, config_hash: impl Into<String>, version: impl Into<String>) -> Self {
        let started_unix = now_unix();
        Manifest {
            command: command.into(),
            config_hash: config_hash.into(),
            version: version.into(),
            started_unix,
            started_utc: utc_string(started_unix),
            finished_unix: None,
            finished_utc: None,
        }
    }

    /// Stamp completion.
    pub fn finish(&mut self) {
        let t = now_unix();
        self.finished_unix = Some(t);
        self.finished_utc = Some(utc_string(t));
    }

    /// Write `manifest.json` into `dir`, creating the directory if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let bytes = std::fs::read(dir.join(MANIFEST_FILE))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Serde(e.to_string()))
    }
}
