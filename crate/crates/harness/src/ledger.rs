//! Append-only run ledger. Every job outcome is appended as an event; the
//! latest event per key is its status. The file is rewritten atomically
//! (write to a temporary file, then rename) under a mutex.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;
use crate::error::{HarnessError, PathContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub key: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Digest of everything the job read: config, inputs and dependencies.
    pub fingerprint: String,
    /// SHA-256 of the job's output file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_digest: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub version: String,
    pub workers: usize,
}

impl Environment {
    pub fn current(workers: usize) -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            workers,
        }
    }
}

/// One invocation that appended to the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub first_seq: u64,
    pub environment: Environment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerFile {
    pub schema_version: u32,
    pub config_digest: String,
    pub sessions: Vec<Session>,
    pub events: Vec<Event>,
}

impl LedgerFile {
    /// Latest event per key.
    pub fn latest(&self) -> BTreeMap<&str, &Event> {
        let mut out = BTreeMap::new();
        for e in &self.events {
            out.insert(e.key.as_str(), e);
        }
        out
    }
}

pub struct Ledger {
    path: PathBuf,
    file: Mutex<LedgerFile>,
}

pub fn read_ledger(path: &Path) -> Result<LedgerFile> {
    let bytes = std::fs::read(path).at(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).at(&tmp)?;
    std::fs::rename(&tmp, path).at(path)?;
    Ok(())
}

impl Ledger {
    /// Opens (or creates) the ledger for `config_digest`. An existing ledger
    /// written for another configuration is refused.
    pub fn open(path: &Path, config_digest: &str, environment: Environment) -> Result<Self> {
        let mut file = if path.exists() {
            let f = read_ledger(path)?;
            if f.config_digest != config_digest {
                return Err(HarnessError::config(
                    "run.output_dir",
                    format!(
                        "{} belongs to a run with config digest {}, not {config_digest}; use a fresh output directory",
                        path.display(),
                        f.config_digest
                    ),
                ));
            }
            f
        } else {
            LedgerFile {
                schema_version: SCHEMA_VERSION,
                config_digest: config_digest.to_string(),
                sessions: Vec::new(),
                events: Vec::new(),
            }
        };
        file.sessions.push(Session {
            first_seq: file.events.len() as u64,
            environment,
        });
        let ledger = Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        };
        ledger.flush(&ledger.file.lock().expect("ledger lock"))?;
        Ok(ledger)
    }

    fn flush(&self, file: &LedgerFile) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(file)?;
        bytes.push(b'\n');
        write_atomic(&self.path, &bytes)
    }

    pub fn append(
        &self,
        key: &str,
        status: Status,
        reason: Option<String>,
        fingerprint: &str,
        output_digest: Option<String>,
        seconds: f64,
    ) -> Result<()> {
        let mut file = self.file.lock().expect("ledger lock");
        let seq = file.events.len() as u64;
        file.events.push(Event {
            seq,
            key: key.to_string(),
            status,
            reason,
            fingerprint: fingerprint.to_string(),
            output_digest,
            seconds,
        });
        self.flush(&file)
    }

    pub fn snapshot(&self) -> LedgerFile {
        self.file.lock().expect("ledger lock").clone()
    }
}
