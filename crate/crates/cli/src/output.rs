//! Output directory bookkeeping and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub code_version: &'static str,
    pub jobs: usize,
    pub wall_clock_s: f64,
    pub outputs: Vec<OutputEntry>,
}

pub const MANIFEST: &str = "manifest.json";
pub const INCOMPLETE: &str = "incomplete.json";

/// Collects the files a command writes; the manifest goes last.
pub struct Outputs {
    pub dir: PathBuf,
    written: Vec<PathBuf>,
    started: Instant,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for stale in [MANIFEST, INCOMPLETE] {
            let p = dir.join(stale);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        self.written.push(p.clone());
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::Numerical(format!("{name}: {e}")))?;
        text.push(b'\n');
        self.write(name, &text)
    }

    /// Registers a file some library call already wrote.
    pub fn register(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn finish<C: Serialize>(self, command: &str, config: &C, seeds: Vec<u64>) -> Result<PathBuf, CliError> {
        let mut outputs = Vec::new();
        for p in &self.written {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
            let rel = p.strip_prefix(&self.dir).unwrap_or(p);
            outputs.push(OutputEntry {
                path: rel.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = RunManifest {
            command,
            config_digest: sha256_hex(&serde_json::to_vec(config).expect("config serializes")),
            seeds,
            code_version: env!("CARGO_PKG_VERSION"),
            jobs: rayon::current_num_threads(),
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            outputs,
        };
        let p = self.path(MANIFEST);
        let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        text.push(b'\n');
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    /// Marks a failed run: lists what was written before the error.
    pub fn abandon(self, command: &str, err: &CliError) {
        let written: Vec<String> = self.written.iter().map(|p| p.display().to_string()).collect();
        let body = serde_json::json!({
            "command": command,
            "error": err.to_string(),
            "partial_outputs": written,
        });
        let _ = std::fs::write(self.path(INCOMPLETE), serde_json::to_vec_pretty(&body).unwrap_or_default());
    }
}
