//! On-disk layout of a run directory and the files persisted in it.

use std::path::{Path, PathBuf};

use robench::attacks::{AttackKind, AttackResult, AttackSpec, Flag};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{AttackPlan, ResolvedConfig, Role, Variant, SCHEMA_VERSION};
use crate::error::{HarnessError, PathContext, Result};

/// One (metric, attack, test dataset, variant) evaluation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub metric: String,
    pub attack: String,
    pub kind: AttackKind,
    pub dataset: String,
    pub variant: String,
}

impl CellKey {
    pub fn id(&self) -> String {
        format!("{}/{}/{}/{}", self.metric, self.attack, self.dataset, self.variant)
    }

    pub fn ledger_key(&self) -> String {
        format!("cell/{}", self.id())
    }
}

/// One trained perturbation: (metric, UAP attack, trainset, amplitude).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UapKey {
    pub metric: String,
    pub attack: String,
    pub kind: AttackKind,
    pub trainset: String,
    pub amplitude: f64,
}

impl UapKey {
    pub fn id(&self) -> String {
        format!("{}/{}/{}@{}", self.metric, self.attack, self.trainset, self.amplitude)
    }

    pub fn ledger_key(&self) -> String {
        format!("uap/{}", self.id())
    }
}

/// Everything `evaluate` and `report` need, written at the start of a run so
/// a run directory can be reported on without the original config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_digest: String,
    pub metrics: Vec<String>,
    pub plans: Vec<AttackPlan>,
    pub test_datasets: Vec<String>,
    pub bootstrap_resamples: usize,
    pub transport_target: Option<String>,
    pub transport_grid: usize,
    pub cells: Vec<CellKey>,
}

impl RunManifest {
    pub fn new(cfg: &ResolvedConfig) -> Self {
        let metrics: Vec<String> = cfg.config.metrics.iter().map(|m| m.name.clone()).collect();
        let tests: Vec<String> = cfg.datasets_with_role(Role::Test).map(|d| d.id.clone()).collect();
        let mut cells = Vec::new();
        for m in &metrics {
            for plan in &cfg.plans {
                for d in &tests {
                    for v in &plan.variants {
                        cells.push(CellKey {
                            metric: m.clone(),
                            attack: plan.label.clone(),
                            kind: plan.spec.kind,
                            dataset: d.clone(),
                            variant: v.name(),
                        });
                    }
                }
            }
        }
        Self {
            schema_version: SCHEMA_VERSION,
            config_digest: cfg.digest.clone(),
            metrics,
            plans: cfg.plans.clone(),
            test_datasets: tests,
            bootstrap_resamples: cfg.config.run.bootstrap_resamples,
            transport_target: cfg.config.run.transport_target.clone(),
            transport_grid: cfg.config.run.transport_grid,
            cells,
        }
    }

    pub fn uap_jobs(&self) -> Vec<UapKey> {
        let mut out = Vec::new();
        for m in &self.metrics {
            for plan in self.plans.iter().filter(|p| p.spec.kind.is_uap()) {
                for v in &plan.variants {
                    if let Variant::Uap { trainset, amplitude } = v {
                        out.push(UapKey {
                            metric: m.clone(),
                            attack: plan.label.clone(),
                            kind: plan.spec.kind,
                            trainset: trainset.clone(),
                            amplitude: *amplitude,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn plan(&self, label: &str) -> Option<&AttackPlan> {
        self.plans.iter().find(|p| p.label == label)
    }

    pub fn variant(&self, cell: &CellKey) -> Option<&Variant> {
        self.plan(&cell.attack)?.variants.iter().find(|v| v.name() == cell.variant)
    }
}

/// Per-item outcome; clips average their frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub name: String,
    pub score_before: f64,
    pub score_after: f64,
    pub mse: f64,
    /// `None` when the item was not changed at all.
    pub psnr: Option<f64>,
    pub ssim: f64,
    pub linf: f64,
    pub flags: Vec<Flag>,
    pub frames: Vec<AttackResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResults {
    pub schema_version: u32,
    pub config_digest: String,
    pub cell: CellKey,
    pub spec: AttackSpec,
    pub spec_digest: String,
    /// Calibrated score range of the metric.
    pub range: (f64, f64),
    pub dataset_digest: String,
    pub perturbation_digest: Option<String>,
    pub items: Vec<ItemResult>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn ledger(&self) -> PathBuf {
        self.root.join("ledger.json")
    }

    pub fn uap_file(&self, k: &UapKey) -> PathBuf {
        self.root
            .join("uap")
            .join(&k.metric)
            .join(&k.attack)
            .join(&k.trainset)
            .join(format!("a{}.pert", k.amplitude))
    }

    pub fn cell_dir(&self, k: &CellKey) -> PathBuf {
        self.root
            .join("cells")
            .join(&k.metric)
            .join(&k.attack)
            .join(&k.dataset)
            .join(&k.variant)
    }

    pub fn cell_results(&self, k: &CellKey) -> PathBuf {
        self.cell_dir(k).join("results.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn read_manifest(&self) -> Result<RunManifest> {
        let path = self.manifest();
        if !path.exists() {
            return Err(HarnessError::RunDir(format!("{} has no config.json; is it a run directory?", self.root.display())));
        }
        Ok(serde_json::from_slice(&std::fs::read(&path).at(&path)?)?)
    }

    pub fn read_cell(&self, k: &CellKey) -> Result<Option<CellResults>> {
        let path = self.cell_results(k);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&std::fs::read(&path).at(&path)?)?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| sha256_hex(&b))
}
