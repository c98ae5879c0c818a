use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use shapkan::rng::RNG_ALGORITHM;

/// Sidecar written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub rng_algorithm: String,
    pub started_unix_seconds: u64,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
    pub summary: Value,
}

/// Collects outputs while a command runs and writes the manifest last.
pub struct Run {
    command: &'static str,
    config: Value,
    seed: Option<u64>,
    started: SystemTime,
    clock: Instant,
    outputs: Vec<PathBuf>,
    manifest_path: PathBuf,
}

/// `out` without its extension, followed by `suffix`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = out.with_extension("").into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

impl Run {
    pub fn start(command: &'static str, config: &impl Serialize, seed: Option<u64>, out: &Path) -> anyhow::Result<Self> {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Self {
            command,
            config: serde_json::to_value(config)?,
            seed,
            started: SystemTime::now(),
            clock: Instant::now(),
            outputs: Vec::new(),
            manifest_path: sibling(out, ".manifest.json"),
        })
    }

    pub fn record(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn write_text(&mut self, path: PathBuf, text: &str) -> anyhow::Result<()> {
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.record(path);
        Ok(())
    }

    pub fn finish(self, summary: Value) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: self.config,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            started_unix_seconds: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_seconds: self.clock.elapsed().as_secs_f64(),
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            summary,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&self.manifest_path, text)
            .with_context(|| format!("writing {}", self.manifest_path.display()))?;
        Ok(())
    }
}
