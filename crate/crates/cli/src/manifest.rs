use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use face4d_core::io::write_json_pretty;
use face4d_core::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Fully resolved options after applying flags, config file and defaults.
    pub config: serde_json::Value,
    /// sha256 of every input file, keyed by `<input name>/<relative path>`.
    pub inputs: BTreeMap<String, String>,
    pub timings_s: BTreeMap<String, f64>,
    pub wall_time_s: f64,
    pub created_unix_s: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: BTreeMap::new(),
            timings_s: BTreeMap::new(),
            wall_time_s: 0.0,
            created_unix_s: 0,
        }
    }

    /// Digests `path` (a file, or every file below a directory) under `name`.
    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        for (rel, digest) in digest_path(path)? {
            let key = if rel.is_empty() { name.to_string() } else { format!("{name}/{rel}") };
            self.inputs.insert(key, digest);
        }
        Ok(())
    }

    pub fn write(mut self, dir: &Path, wall_time_s: f64) -> Result<()> {
        self.wall_time_s = wall_time_s;
        self.created_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        write_json_pretty(&dir.join(MANIFEST_FILE), &self)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// sha256 per file with `/`-separated relative paths in sorted order. A
/// plain file maps to the empty relative path. Manifests of earlier runs
/// are skipped so digests depend only on data.
pub fn digest_path(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    };
    if path.is_file() {
        out.insert(String::new(), sha256_hex(&read(path)?));
        return Ok(out);
    }
    let mut stack = vec![(path.to_path_buf(), String::new())];
    while let Some((dir, prefix)) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let rel = if prefix.is_empty() { name.clone() } else { format!("{prefix}/{name}") };
            let p = entry.path();
            if p.is_dir() {
                stack.push((p, rel));
            } else if name != MANIFEST_FILE {
                out.insert(rel, sha256_hex(&read(&p)?));
            }
        }
    }
    Ok(out)
}
