//! Run manifests: one `manifest.json` per run directory.
//!
//! A manifest records everything needed to reproduce a run: the exact command
//! line, the resolved configuration, the seed and thread count, SHA-256
//! digests of every input file, tool versions, and the outputs written. A run
//! directory that already contains a manifest is refused, so each directory
//! holds exactly one run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use mtsc_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub threads: usize,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub versions: BTreeMap<String, String>,
    pub started_unix_ms: u64,
    pub duration_ms: u64,
}

/// Open run context: accumulates inputs and outputs, then writes the
/// manifest on [`Ctx::finish`]. Dropping without finishing writes nothing,
/// so failed runs leave no manifest behind.
pub struct Ctx {
    out_dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Ctx {
    pub fn create(
        out_dir: &Path,
        command: Vec<String>,
        config: BTreeMap<String, String>,
        seed: u64,
        threads: usize,
    ) -> Result<Ctx> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
        let manifest_path = out_dir.join("manifest.json");
        if manifest_path.exists() {
            return Err(Error::invalid(format!(
                "{} already holds a run manifest; each run needs a fresh --out directory",
                out_dir.display()
            )));
        }
        let mut versions = BTreeMap::new();
        versions.insert("mtsc-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("mtsc-core".to_string(), mtsc_core::VERSION.to_string());
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Ok(Ctx {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                command,
                config,
                seed,
                threads,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                versions,
                started_unix_ms,
                duration_ms: 0,
            },
            started: Instant::now(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Path inside the run directory.
    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Digests one input file into the manifest.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Digests every regular file directly inside `dir` (model directories
    /// are flat).
    pub fn record_input_dir(&mut self, dir: &Path) -> Result<()> {
        let entries =
            std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut paths: Vec<PathBuf> = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
            let path = entry.path();
            if path.is_file() {
                paths.push(path);
            }
        }
        paths.sort();
        for path in &paths {
            self.record_input(path)?;
        }
        Ok(())
    }

    /// Notes a file this run wrote (relative to the run directory).
    pub fn record_output(&mut self, name: &str) {
        self.manifest.outputs.push(name.to_string());
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.duration_ms = self.started.elapsed().as_millis() as u64;
        let path = self.out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::invalid(format!("manifest serialization failed: {e}")))?;
        std::fs::write(&path, json.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}
