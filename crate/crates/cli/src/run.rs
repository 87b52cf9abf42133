//! Timestamped run directories and the manifest written into each.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::Serialize;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "DUALNET_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, Clone, Serialize)]
pub struct Fingerprint {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl Fingerprint {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Fingerprint {
            path: path.to_path_buf(),
            bytes: bytes.len() as u64,
            sha256: dualnet::digest::sha256_hex(&bytes),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config_paths: Vec<PathBuf>,
    /// Content hashes of every input file read by the command.
    pub datasets: Vec<Fingerprint>,
    pub output_dir: PathBuf,
    pub outputs: Vec<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub wall_secs: f64,
    pub status: String,
    pub error: Option<String>,
}

/// An output directory being filled by one command.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    clock: Instant,
}

fn unique_dir(root: &Path, stem: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root).with_context(|| format!("creating output root {}", root.display()))?;
    for n in 1.. {
        let name = if n == 1 { stem.to_string() } else { format!("{stem}-{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!("unbounded search")
}

impl Run {
    /// Create `<root>/<UTC timestamp>-<command>` (suffixed when taken).
    pub fn start(root: &Path, command: &str) -> Result<Self> {
        let now = Utc::now();
        let dir = unique_dir(root, &format!("{}-{command}", now.format("%Y%m%dT%H%M%SZ")))?;
        Ok(Run {
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().collect(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed: None,
                config_paths: Vec::new(),
                datasets: Vec::new(),
                output_dir: dir.clone(),
                outputs: Vec::new(),
                started_at: now,
                finished_at: None,
                wall_secs: 0.0,
                status: "running".into(),
                error: None,
            },
            dir,
            clock: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.datasets.push(Fingerprint::of(path)?);
        Ok(())
    }

    pub fn config(&mut self, path: &Path) -> Result<()> {
        self.manifest.config_paths.push(path.to_path_buf());
        self.input(path)
    }

    /// Path for an output file, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.output(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Write `manifest.json`, recording `outcome`.
    pub fn finish(mut self, outcome: &Result<()>) -> Result<PathBuf> {
        self.manifest.finished_at = Some(Utc::now());
        self.manifest.wall_secs = self.clock.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.error = Some(format!("{e:#}"));
            }
        }
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(self.dir)
    }
}
