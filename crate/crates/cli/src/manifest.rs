//! Run manifest: one `key = value` file per output directory recording, per
//! command, the config hash, seeds, format versions and output digests.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use skillsel::config::KvConfig;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub struct Manifest {
    command: String,
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, config: &KvConfig) -> Self {
        let mut m = Self { command: command.to_string(), entries: Vec::new() };
        m.set("config_sha256", sha256_hex(config.to_text().as_bytes()));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Record an output file and its digest.
    pub fn output(&mut self, name: &str, bytes: &[u8]) {
        self.set(&format!("output.{name}"), sha256_hex(bytes));
    }

    /// Merge into `dir/manifest.txt`, replacing earlier records of the same
    /// command.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut all = match fs::read_to_string(&path) {
            Ok(text) => KvConfig::parse(&text).unwrap_or_default(),
            Err(_) => KvConfig::new(),
        };
        let prefix = format!("{}.", self.command);
        let mut kept = KvConfig::new();
        for (k, v) in all.iter() {
            if !k.starts_with(&prefix) {
                kept.set(k, v);
            }
        }
        all = kept;
        for (k, v) in &self.entries {
            all.set(&format!("{}{k}", prefix), v);
        }
        fs::write(path, all.to_text())
    }
}
