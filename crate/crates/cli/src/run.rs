//! Run directories: every product is written through [`RunDir`], which
//! records its SHA-256 digest for the manifest.

use anyhow::Context;
use kpzlab::export::{write_records, write_table, Plot};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: serde_json::Value,
    pub master_seed: u64,
    pub code_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub warnings: Vec<String>,
    pub outputs: Vec<OutputEntry>,
}

pub const MANIFEST: &str = "manifest.json";

pub struct RunDir {
    root: PathBuf,
    format: Format,
    outputs: Vec<OutputEntry>,
    pub warnings: Vec<String>,
    started: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunDir {
    pub fn create(root: &Path, format: Format) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), format, outputs: Vec::new(), warnings: Vec::new(), started: now() })
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.outputs.push(OutputEntry { path: rel.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, v: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(v)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    /// Numeric table as `<stem>.csv` or `<stem>.json` (array of row objects).
    pub fn write_table(&mut self, stem: &str, headers: &[&str], rows: &[Vec<f64>]) -> anyhow::Result<()> {
        match self.format {
            Format::Csv => {
                let mut buf = Vec::new();
                write_table(&mut buf, headers, rows)?;
                self.write_bytes(&format!("{stem}.csv"), &buf)
            }
            Format::Json => {
                let objs: Vec<serde_json::Map<String, serde_json::Value>> =
                    rows.iter().map(|r| headers.iter().zip(r).map(|(h, v)| (h.to_string(), json_num(*v))).collect()).collect();
                self.write_json(&format!("{stem}.json"), &objs)
            }
        }
    }

    /// Text table (label columns allowed).
    pub fn write_records(&mut self, stem: &str, headers: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
        match self.format {
            Format::Csv => {
                let mut buf = Vec::new();
                write_records(&mut buf, headers, rows)?;
                self.write_bytes(&format!("{stem}.csv"), &buf)
            }
            Format::Json => {
                let objs: Vec<serde_json::Map<String, serde_json::Value>> = rows
                    .iter()
                    .map(|r| {
                        headers
                            .iter()
                            .zip(r)
                            .map(|(h, v)| (h.to_string(), v.parse::<f64>().map(json_num).unwrap_or_else(|_| serde_json::Value::String(v.clone()))))
                            .collect()
                    })
                    .collect();
                self.write_json(&format!("{stem}.json"), &objs)
            }
        }
    }

    pub fn write_plot(&mut self, rel: &str, plot: &Plot) -> anyhow::Result<()> {
        self.write_bytes(rel, plot.to_svg().as_bytes())
    }

    pub fn finish(mut self, command: &str, parameters: serde_json::Value, master_seed: u64) -> anyhow::Result<RunManifest> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let m = RunManifest {
            command: command.into(),
            parameters,
            master_seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: self.started,
            finished_unix: now(),
            warnings: self.warnings.clone(),
            outputs: self.outputs.clone(),
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        std::fs::write(self.root.join(MANIFEST), text)?;
        Ok(m)
    }
}

fn json_num(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map(serde_json::Value::Number).unwrap_or(serde_json::Value::Null)
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<RunManifest> {
    let p = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

/// Recomputes every digest listed in a manifest; returns the mismatches.
pub fn verify(dir: &Path, m: &RunManifest) -> anyhow::Result<Vec<String>> {
    let mut bad = Vec::new();
    for o in &m.outputs {
        let bytes = std::fs::read(dir.join(&o.path)).with_context(|| format!("reading {}", o.path))?;
        if sha256_hex(&bytes) != o.sha256 {
            bad.push(o.path.clone());
        }
    }
    Ok(bad)
}
