use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Reproducibility record of one command. Holds nothing that varies between
/// identical runs: files are keyed by role, not by path, and timing lives
/// in a separate file.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize) -> Self {
        RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            ..Default::default()
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        digest_into(&mut self.inputs, role, path)
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        digest_into(&mut self.outputs, role, path)
    }

    pub fn count(&mut self, key: &str, n: usize) {
        self.counts.insert(key.to_string(), n as u64);
    }

    /// Writes the manifest and a timing file next to it.
    pub fn write(&self, path: &Path, started: Instant) -> Result<()> {
        write_json(path, self)?;
        let timing = serde_json::json!({
            "command": self.command,
            "wall_seconds": started.elapsed().as_secs_f64(),
        });
        write_json(&timing_path(path), &timing)
    }
}

fn digest_into(map: &mut BTreeMap<String, String>, role: &str, path: &Path) -> Result<()> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        names.sort();
        for p in names.into_iter().filter(|p| p.is_file()) {
            let name = p.file_name().expect("file").to_string_lossy().to_string();
            if name.ends_with("manifest.json") || name.ends_with("timing.json") {
                continue;
            }
            map.insert(format!("{role}/{name}"), sha256_file(&p)?);
        }
    } else {
        map.insert(role.to_string(), sha256_file(path)?);
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `x.json` gives `x.manifest.json`; a directory gives `dir/manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        return out.join("manifest.json");
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn timing_path(manifest: &Path) -> PathBuf {
    let name = manifest
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    let name = match name.strip_suffix("manifest.json") {
        Some(prefix) => format!("{prefix}timing.json"),
        None => format!("{name}.timing.json"),
    };
    manifest.with_file_name(name)
}

/// Pretty JSON with a trailing newline, written through a temporary file.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}
