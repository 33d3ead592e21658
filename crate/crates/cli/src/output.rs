//! Atomic file output, JSONL helpers and the run manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::exit::usage;

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Write `bytes` to a temporary file beside `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// A JSON line with the schema version stamped in front of the payload's
/// own fields.
#[derive(Serialize)]
struct Versioned<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    inner: &'a T,
}

pub fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(
            &mut out,
            &Versioned {
                schema_version: SCHEMA_VERSION,
                inner: item,
            },
        )?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// Every non-blank line of a JSONL file. Unknown fields, including
/// `schema_version`, are ignored; a newer schema is rejected.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: invalid JSON", path.display(), n + 1))?;
        if let Some(v) = value.get("schema_version").and_then(|v| v.as_u64()) {
            if v > u64::from(SCHEMA_VERSION) {
                anyhow::bail!("{}:{}: schema_version {v} is newer than {SCHEMA_VERSION}", path.display(), n + 1);
            }
        }
        out.push(
            serde_json::from_value(value)
                .with_context(|| format!("{}:{}: unexpected record layout", path.display(), n + 1))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Reproducibility record for one invocation. It has no timestamps, so
/// reruns with the same inputs reproduce it byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub outputs: Vec<OutputEntry>,
}

/// Collects the files a command writes and finishes with its manifest.
pub struct Run {
    manifest: Manifest,
}

impl Run {
    /// Prints the reproducibility stanza to stderr. `config` is the parsed
    /// subcommand; output locations are left out of the hash so the same
    /// inputs give the same fingerprint wherever results are written.
    pub fn start<C: Serialize>(command: &str, seed: Option<u64>, config: &C) -> Result<Self> {
        let mut value = serde_json::to_value(config)?;
        if let Some(map) = value.as_object_mut() {
            for key in ["out", "out_dir", "failures", "mesh_out", "checkpoint"] {
                map.remove(key);
            }
        }
        let config_sha256 = mpvqa::rng::fingerprint(serde_json::to_string(&value)?.as_bytes());
        eprintln!("mpvqa {VERSION}");
        eprintln!("command: {command}");
        match seed {
            Some(s) => eprintln!("seed: {s}"),
            None => eprintln!("seed: none"),
        }
        eprintln!("config-sha256: {config_sha256}");
        Ok(Run {
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                tool: "mpvqa",
                version: VERSION,
                command: command.to_string(),
                seed,
                config_sha256,
                outputs: Vec::new(),
            },
        })
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.manifest.outputs.push(OutputEntry {
            file: path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            bytes: bytes.len(),
            sha256: mpvqa::rng::fingerprint(bytes),
        });
        Ok(())
    }

    /// Writes the manifest to `path`.
    pub fn finish(self, path: &Path) -> Result<()> {
        write_atomic(path, &pretty_json(&self.manifest)?)
    }
}

/// `<path>.<suffix>` next to `path`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}
