//! Run configuration: TOML schema, environment overrides, validation and the
//! digest that ties every output back to the configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use robench::attacks::{defaults, AttackKind, AttackSpec};
use robench::metrics::{metric_names, InputPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, PathContext, Result};

pub const ENV_OUTPUT_DIR: &str = "ROBENCH_OUTPUT_DIR";
pub const ENV_DATA_DIR: &str = "ROBENCH_DATA_DIR";
pub const ENV_WORKERS: &str = "ROBENCH_WORKERS";

/// Bumped whenever the meaning of persisted files changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub metrics: Vec<MetricEntry>,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub attacks: Vec<AttackEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Relative paths resolve against the working directory.
    pub output_dir: PathBuf,
    /// Base for relative dataset paths; defaults to the config file's directory.
    pub data_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub bootstrap_resamples: usize,
    /// Also write attacked images as PNG next to each cell's results.
    pub persist_images: bool,
    /// When set, scores are also reported after quantile transport onto
    /// this metric's clean-score distribution.
    pub transport_target: Option<String>,
    pub transport_grid: usize,
    /// Default `extra.units` for MADC attacks that do not set it.
    pub madc_units: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("robench-out"),
            data_dir: None,
            workers: 0,
            bootstrap_resamples: robench::eval::BOOTSTRAP_RESAMPLES,
            persist_images: false,
            transport_target: None,
            transport_grid: 101,
            madc_units: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricEntry {
    pub name: String,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub input_policy: Option<InputPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    #[default]
    ImageSet,
    FrameSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Train,
    Test,
    Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub kind: DatasetKind,
    pub role: Role,
}

/// One attack block. Fields left out take the attack defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    pub kind: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Sweep over budgets (FGSM, I-FGSM, MI-FGSM only).
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    /// UAP amplitudes; defaults to 0.2, 0.4 and 0.8.
    #[serde(default)]
    pub amplitudes: Option<Vec<f64>>,
    /// UAP training datasets; defaults to every train dataset.
    #[serde(default)]
    pub trainsets: Option<Vec<String>>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// One concrete setting of an attack block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Variant {
    Base,
    Epsilon { epsilon: f64 },
    Uap { trainset: String, amplitude: f64 },
}

impl Variant {
    /// Directory- and label-safe name.
    pub fn name(&self) -> String {
        match self {
            Variant::Base => "base".into(),
            Variant::Epsilon { epsilon } => format!("eps{epsilon}"),
            Variant::Uap { trainset, amplitude } => format!("{trainset}@{amplitude}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub label: String,
    /// Base spec; variants override epsilon or amplitude.
    pub spec: AttackSpec,
    pub variants: Vec<Variant>,
}

impl AttackPlan {
    pub fn spec_for(&self, variant: &Variant) -> AttackSpec {
        let mut spec = self.spec.clone();
        match variant {
            Variant::Base => {}
            Variant::Epsilon { epsilon } => spec.epsilon = *epsilon,
            Variant::Uap { amplitude, .. } => spec.amplitude = *amplitude,
        }
        spec
    }
}

/// A validated configuration with paths resolved and the digest computed.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub plans: Vec<AttackPlan>,
    /// Content digests of the metric weight files, by metric name.
    pub weight_digests: BTreeMap<String, String>,
    pub digest: String,
}

impl ResolvedConfig {
    pub fn dataset(&self, id: &str) -> Option<&DatasetEntry> {
        self.config.datasets.iter().find(|d| d.id == id)
    }

    pub fn datasets_with_role(&self, role: Role) -> impl Iterator<Item = &DatasetEntry> {
        self.config.datasets.iter().filter(move |d| d.role == role)
    }

    pub fn dataset_path(&self, entry: &DatasetEntry) -> PathBuf {
        self.data_dir.join(&entry.path)
    }

    pub fn weights_path(&self, entry: &MetricEntry) -> Option<PathBuf> {
        entry.weights.as_ref().map(|w| self.data_dir.join(w))
    }

    pub fn plan(&self, label: &str) -> Option<&AttackPlan> {
        self.plans.iter().find(|p| p.label == label)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| {
        let reason = e.message().to_string();
        let key = reason
            .strip_prefix("unknown field `")
            .and_then(|r| r.split('`').next())
            .unwrap_or("<document>")
            .to_string();
        HarnessError::config(key, format!("{}", e).trim_end().replace('\n', " "))
    })
}

/// Reads, overrides from the process environment and validates a config file.
pub fn load_config(path: &Path) -> Result<ResolvedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    let config = parse_config(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(config, &base, &|k| std::env::var(k).ok())
}

fn check_name(key: String, name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
    if ok {
        Ok(())
    } else {
        Err(HarnessError::config(key, format!("`{name}` must be non-empty and use only [A-Za-z0-9._-]")))
    }
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path).at(path)?)))
}

/// Applies environment overrides, validates everything that can be checked
/// without decoding images, and computes the digest. `config_dir` anchors
/// relative dataset and weight paths unless a data directory is set.
pub fn resolve(mut config: RunConfig, config_dir: &Path, env: &dyn Fn(&str) -> Option<String>) -> Result<ResolvedConfig> {
    if let Some(v) = env(ENV_OUTPUT_DIR) {
        config.run.output_dir = PathBuf::from(v);
    }
    if let Some(v) = env(ENV_DATA_DIR) {
        config.run.data_dir = Some(PathBuf::from(v));
    }
    if let Some(v) = env(ENV_WORKERS) {
        config.run.workers = v
            .trim()
            .parse()
            .map_err(|_| HarnessError::config(ENV_WORKERS, format!("`{v}` is not a worker count")))?;
    }
    let data_dir = match &config.run.data_dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => config_dir.join(d),
        None => config_dir.to_path_buf(),
    };
    let workers = match config.run.workers {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    };

    if config.metrics.is_empty() {
        return Err(HarnessError::config("metrics", "at least one metric is required"));
    }
    let known = metric_names();
    let mut seen = BTreeSet::new();
    let mut weight_digests = BTreeMap::new();
    for (i, m) in config.metrics.iter().enumerate() {
        if !known.contains(&m.name.as_str()) {
            return Err(HarnessError::config(
                format!("metrics[{i}].name"),
                format!("unknown metric `{}`; registered: {}", m.name, known.join(", ")),
            ));
        }
        if !seen.insert(m.name.clone()) {
            return Err(HarnessError::config(format!("metrics[{i}].name"), format!("`{}` listed twice", m.name)));
        }
        if let Some(w) = &m.weights {
            let p = data_dir.join(w);
            if !p.is_file() {
                return Err(HarnessError::config(
                    format!("metrics[{i}].weights"),
                    format!("{} does not exist", p.display()),
                ));
            }
            weight_digests.insert(m.name.clone(), file_digest(&p)?);
        }
    }

    let mut ids = BTreeSet::new();
    for (i, d) in config.datasets.iter().enumerate() {
        check_name(format!("datasets[{i}].id"), &d.id)?;
        if !ids.insert(d.id.clone()) {
            return Err(HarnessError::config(format!("datasets[{i}].id"), format!("`{}` listed twice", d.id)));
        }
        let p = data_dir.join(&d.path);
        if !p.is_dir() {
            return Err(HarnessError::config(
                format!("datasets[{i}].path"),
                format!("{} is not a directory", p.display()),
            ));
        }
    }
    for (role, what) in [(Role::Test, "test"), (Role::Calibration, "calibration")] {
        if !config.datasets.iter().any(|d| d.role == role) {
            return Err(HarnessError::config("datasets", format!("no dataset with role `{what}`")));
        }
    }
    let trainsets: Vec<String> = config.datasets.iter().filter(|d| d.role == Role::Train).map(|d| d.id.clone()).collect();

    if let Some(t) = &config.run.transport_target {
        if !config.metrics.iter().any(|m| &m.name == t) {
            return Err(HarnessError::config("run.transport_target", format!("`{t}` is not one of the configured metrics")));
        }
    }
    if config.run.transport_grid < 2 {
        return Err(HarnessError::config("run.transport_grid", "needs at least 2 grid points"));
    }
    if let Some(u) = &config.run.madc_units {
        if u != "unit" && u != "eight-bit" {
            return Err(HarnessError::config("run.madc_units", format!("`{u}` is not `unit` or `eight-bit`")));
        }
    }

    if config.attacks.is_empty() {
        return Err(HarnessError::config("attacks", "at least one attack is required"));
    }
    let mut plans: Vec<AttackPlan> = Vec::new();
    for (i, a) in config.attacks.iter().enumerate() {
        let plan = plan_attack(i, a, &config.run, &trainsets)?;
        if plans.iter().any(|p| p.label == plan.label) {
            return Err(HarnessError::config(
                format!("attacks[{i}].label"),
                format!("label `{}` is already used; set a distinct `label`", plan.label),
            ));
        }
        plans.push(plan);
    }

    let digest = config_digest(&config, &plans, &weight_digests);
    Ok(ResolvedConfig {
        output_dir: config.run.output_dir.clone(),
        config,
        data_dir,
        workers,
        plans,
        weight_digests,
        digest,
    })
}

fn plan_attack(i: usize, a: &AttackEntry, run: &RunSection, trainsets: &[String]) -> Result<AttackPlan> {
    let key = |field: &str| format!("attacks[{i}].{field}");
    let kind: AttackKind = a.kind.parse().map_err(|_| {
        let all: Vec<&str> = AttackKind::ALL.iter().map(|k| k.as_str()).collect();
        HarnessError::config(key("kind"), format!("unknown attack kind `{}`; known: {}", a.kind, all.join(", ")))
    })?;
    let label = a.label.clone().unwrap_or_else(|| kind.as_str().to_string());
    check_name(key("label"), &label)?;

    let mut spec = AttackSpec::new(kind);
    if let Some(v) = a.epsilon {
        spec.epsilon = v;
    }
    if let Some(v) = a.alpha {
        spec.alpha = v;
    }
    if let Some(v) = a.iterations {
        spec.iterations = v;
    }
    if let Some(v) = a.momentum {
        spec.momentum = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    spec.extra = a.extra.clone();
    if kind == AttackKind::Madc && !spec.extra.contains_key("units") {
        if let Some(u) = &run.madc_units {
            spec.extra.insert("units".into(), u.clone().into());
        }
    }
    check_extras(i, kind, &spec.extra)?;
    spec.validate().map_err(|e| {
        let msg = e.to_string();
        let field = ["epsilon", "alpha", "iterations", "momentum", "amplitude"]
            .into_iter()
            .find(|f| msg.contains(f));
        HarnessError::config(field.map_or(format!("attacks[{i}]"), key), msg)
    })?;

    let variants = if kind.is_uap() {
        if a.epsilons.is_some() || a.epsilon.is_some() {
            return Err(HarnessError::config(key("epsilon"), "universal perturbations are sized by `amplitudes`"));
        }
        let chosen = match &a.trainsets {
            Some(list) => {
                for t in list {
                    if !trainsets.contains(t) {
                        return Err(HarnessError::config(
                            key("trainsets"),
                            format!("`{t}` is not a dataset with role `train`"),
                        ));
                    }
                }
                list.clone()
            }
            None => trainsets.to_vec(),
        };
        if chosen.is_empty() {
            return Err(HarnessError::config(
                format!("attacks[{i}]"),
                format!("`{}` needs at least one dataset with role `train`", kind),
            ));
        }
        let amps = a.amplitudes.clone().unwrap_or_else(|| defaults::AMPLITUDES.to_vec());
        if amps.is_empty() || amps.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(HarnessError::config(key("amplitudes"), "amplitudes must be a non-empty list of finite values >= 0"));
        }
        let mut out = Vec::new();
        for t in &chosen {
            for &amplitude in &amps {
                out.push(Variant::Uap { trainset: t.clone(), amplitude });
            }
        }
        out
    } else {
        if a.amplitudes.is_some() {
            return Err(HarnessError::config(key("amplitudes"), "only universal perturbations take amplitudes"));
        }
        if a.trainsets.is_some() {
            return Err(HarnessError::config(key("trainsets"), "only universal perturbations are trained"));
        }
        match &a.epsilons {
            None => vec![Variant::Base],
            Some(list) => {
                if !matches!(kind, AttackKind::Fgsm | AttackKind::Ifgsm | AttackKind::Mifgsm) {
                    return Err(HarnessError::config(key("epsilons"), format!("`{kind}` has no epsilon sweep")));
                }
                if a.epsilon.is_some() {
                    return Err(HarnessError::config(key("epsilons"), "set either `epsilon` or `epsilons`"));
                }
                if list.is_empty() || list.iter().any(|e| !(0.0..=1.0).contains(e)) {
                    return Err(HarnessError::config(key("epsilons"), "epsilons must be a non-empty list inside [0, 1]"));
                }
                list.iter().map(|&epsilon| Variant::Epsilon { epsilon }).collect()
            }
        }
    };
    let mut names = BTreeSet::new();
    for v in &variants {
        if !names.insert(v.name()) {
            return Err(HarnessError::config(format!("attacks[{i}]"), format!("variant `{}` appears twice", v.name())));
        }
    }
    Ok(AttackPlan { label, spec, variants })
}

/// Checks extras against the keys the attack reads. The catalog default
/// tells the expected type: `a | b` choices, booleans, integers or numbers.
fn check_extras(i: usize, kind: AttackKind, extra: &BTreeMap<String, serde_json::Value>) -> Result<()> {
    let allowed = kind.extra_keys();
    for (k, v) in extra {
        let key = format!("attacks[{i}].extra.{k}");
        let Some((_, default)) = allowed.iter().find(|(name, _)| name == k) else {
            let names: Vec<&str> = allowed.iter().map(|(n, _)| *n).collect();
            let hint = if names.is_empty() { "none".to_string() } else { names.join(", ") };
            return Err(HarnessError::config(key, format!("`{kind}` does not read this key (accepted: {hint})")));
        };
        let ok = if default.contains('|') {
            let choices: Vec<&str> = default.split('|').map(str::trim).collect();
            v.as_str().is_some_and(|s| choices.contains(&s))
        } else if *default == "true" || *default == "false" {
            v.is_boolean()
        } else if default.contains('.') {
            v.as_f64().is_some_and(f64::is_finite)
        } else {
            v.as_u64().is_some()
        };
        if !ok {
            return Err(HarnessError::config(key, format!("{v} does not fit (expected like `{default}`)")));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DigestView<'a> {
    schema_version: u32,
    metrics: Vec<(&'a str, Option<InputPolicy>, Option<&'a String>)>,
    datasets: Vec<(&'a str, DatasetKind, Role)>,
    attacks: &'a [AttackPlan],
    bootstrap_resamples: usize,
    transport_target: &'a Option<String>,
    transport_grid: usize,
}

/// SHA-256 over the semantic content of the config. Paths, worker count and
/// image persistence do not change results and are left out.
fn config_digest(config: &RunConfig, plans: &[AttackPlan], weights: &BTreeMap<String, String>) -> String {
    let view = DigestView {
        schema_version: SCHEMA_VERSION,
        metrics: config
            .metrics
            .iter()
            .map(|m| (m.name.as_str(), m.input_policy, weights.get(&m.name)))
            .collect(),
        datasets: config.datasets.iter().map(|d| (d.id.as_str(), d.kind, d.role)).collect(),
        attacks: plans,
        bootstrap_resamples: config.run.bootstrap_resamples,
        transport_target: &config.run.transport_target,
        transport_grid: config.run.transport_grid,
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&view).expect("digest view serializes")))
}
