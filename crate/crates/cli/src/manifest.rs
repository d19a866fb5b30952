use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance block written into every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub problem: String,
    pub seed: u64,
    pub version: String,
    /// SHA-256 of the problem text and the effective options.
    pub config_hash: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, problem: &str, problem_text: &str, options: &str, seed: u64, reproducible: bool) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(problem_text.as_bytes());
        hasher.update([0u8]);
        hasher.update(command.as_bytes());
        hasher.update([0u8]);
        hasher.update(options.as_bytes());
        let config_hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            command: command.to_string(),
            problem: problem.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            timestamp: timestamp(reproducible),
        }
    }

    /// `key: value` lines for CSV comments and SVG metadata.
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("command: {}", self.command),
            format!("problem: {}", self.problem),
            format!("seed: {}", self.seed),
            format!("version: {}", self.version),
            format!("config_hash: {}", self.config_hash),
            format!("timestamp: {}", self.timestamp),
        ]
    }
}

/// Wall clock, or `SOURCE_DATE_EPOCH` (default 0) for reproducible runs.
fn timestamp(reproducible: bool) -> String {
    let time = if reproducible {
        let secs = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .unwrap_or(0);
        UNIX_EPOCH + Duration::from_secs(secs)
    } else {
        SystemTime::now()
    };
    humantime::format_rfc3339_seconds(time).to_string()
}
