//! Experiment configuration: TOML files, per-experiment defaults, `--set`
//! overrides and validation.
//!
//! Loading works on raw TOML tables. The user's file is patched with the
//! overrides, laid over the defaults for its `experiment` kind, and only then
//! deserialized, so every field of the resolved config is explicit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use flde_core::data::{ClassificationSpec, DomainSpec, SplitSizes, Standardization};
use flde_core::{DpConfig, Mode, TaskKind, TrainConfig};

use crate::error::{in_section, Error, Result};

pub const OUT_DIR_ENV: &str = "FLDE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "flde-out";

/// Configs shipped with the binary, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("synthetic_table1", include_str!("../configs/synthetic_table1.toml")),
    ("spamlike_fig2", include_str!("../configs/spamlike_fig2.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SyntheticRegression,
    SyntheticClassification,
    SparseFile,
}

impl ExperimentKind {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "synthetic_regression" => Some(Self::SyntheticRegression),
            "synthetic_classification" => Some(Self::SyntheticClassification),
            "sparse_file" => Some(Self::SparseFile),
            _ => None,
        }
    }

    fn section(self) -> &'static str {
        match self {
            Self::SyntheticRegression => "regression",
            Self::SyntheticClassification => "classification",
            Self::SparseFile => "sparse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    None,
    PerUser,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Regression,
    Classification,
}

impl From<TaskName> for TaskKind {
    fn from(t: TaskName) -> Self {
        match t {
            TaskName::Regression => TaskKind::Regression,
            TaskName::Classification => TaskKind::BinaryClassification,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub rounds: usize,
    pub batch_size: usize,
    pub lr_general: f64,
    pub lr_private: f64,
    pub lr_decay: f64,
    pub lr_decay_stages: usize,
    pub l2: f64,
    /// Per-example clipping norm for cells with sigma > 0.
    pub clip_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub gate_grid_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
}

impl From<&DomainSection> for DomainSpec {
    fn from(d: &DomainSection) -> Self {
        DomainSpec {
            mean: d.mean,
            covariance: d.covariance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSection {
    pub train_per_user: usize,
    pub validation_per_user: usize,
    pub test_per_user: usize,
    pub domains: Vec<DomainSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationSection {
    pub num_users: usize,
    pub dim: usize,
    pub train_per_user: usize,
    pub validation_per_user: usize,
    pub test_per_user: usize,
    pub max_rotation_deg: f64,
    pub label_noise: f64,
    pub domain_shift: f64,
    pub min_positive: f64,
    pub max_positive: f64,
    pub standardize: StandardizeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub task: TaskName,
    pub num_users: usize,
    /// Declared feature dimension; inferred from the file when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub train_per_user: usize,
    pub validation_per_user: usize,
    pub standardize: StandardizeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Master seed for data generation, batch sampling and DP noise.
    pub seed: u64,
    pub sigma_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub train: TrainSection,
    pub report: ReportSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse: Option<SparseSection>,
}

impl ExperimentConfig {
    /// Fully populated defaults for one experiment kind.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut cfg = ExperimentConfig {
            experiment: kind,
            seed: 1,
            sigma_grid: vec![0.0, 2.0, 4.0],
            output_dir: None,
            train: TrainSection {
                rounds: 2000,
                batch_size: 32,
                lr_general: 0.05,
                lr_private: 0.05,
                lr_decay: 0.5,
                lr_decay_stages: 4,
                l2: 0.0,
                clip_norm: 10.0,
            },
            report: ReportSection { gate_grid_steps: 101 },
            regression: None,
            classification: None,
            sparse: None,
        };
        match kind {
            ExperimentKind::SyntheticRegression => {
                cfg.regression = Some(RegressionSection {
                    train_per_user: 2500,
                    validation_per_user: 500,
                    test_per_user: 500,
                    domains: vec![
                        DomainSection {
                            mean: [-2.0, 0.0],
                            covariance: [[1.5, 1.2], [1.2, 4.0]],
                        },
                        DomainSection {
                            mean: [2.0, 0.0],
                            covariance: [[1.5, -1.2], [-1.2, 4.0]],
                        },
                    ],
                });
            }
            ExperimentKind::SyntheticClassification => {
                cfg.sigma_grid = vec![0.0, 0.5, 1.0];
                cfg.train = classification_train();
                cfg.classification = Some(ClassificationSection {
                    num_users: 15,
                    dim: 50,
                    train_per_user: 50,
                    validation_per_user: 0,
                    test_per_user: 350,
                    max_rotation_deg: 45.0,
                    label_noise: 0.05,
                    domain_shift: 2.0,
                    min_positive: 0.3,
                    max_positive: 0.7,
                    standardize: StandardizeMode::Pooled,
                });
            }
            ExperimentKind::SparseFile => {
                cfg.sigma_grid = vec![0.0, 0.5, 1.0];
                cfg.train = classification_train();
                cfg.sparse = Some(SparseSection {
                    path: None,
                    task: TaskName::Classification,
                    num_users: 15,
                    dim: None,
                    train_per_user: 50,
                    validation_per_user: 0,
                    standardize: StandardizeMode::Pooled,
                });
            }
        }
        cfg
    }

    pub fn task(&self) -> TaskKind {
        match self.experiment {
            ExperimentKind::SyntheticRegression => TaskKind::Regression,
            ExperimentKind::SyntheticClassification => TaskKind::BinaryClassification,
            ExperimentKind::SparseFile => self.sparse.as_ref().map_or(TaskKind::BinaryClassification, |s| s.task.into()),
        }
    }

    /// Training settings for one cell of the grid. Every cell shares the
    /// master seed, so all systems see the same data and batches.
    pub fn train_config(&self, mode: Mode, sigma: f64) -> Result<TrainConfig> {
        let t = &self.train;
        let mut cfg = TrainConfig::new(mode, self.task());
        cfg.rounds = t.rounds;
        cfg.batch_size = t.batch_size;
        cfg.lr_general = t.lr_general;
        cfg.lr_private = t.lr_private;
        cfg.lr_decay = t.lr_decay;
        cfg.lr_decay_stages = t.lr_decay_stages;
        cfg.l2 = t.l2;
        cfg.seed = self.seed;
        cfg.dp = if sigma > 0.0 && mode != Mode::Baseline {
            DpConfig::new(t.clip_norm, sigma).map_err(|e| in_section("train", e))?
        } else {
            DpConfig::disabled()
        };
        cfg.validate().map_err(|e| in_section("train", e))?;
        Ok(cfg)
    }

    pub fn domain_specs(&self) -> Vec<DomainSpec> {
        self.regression
            .as_ref()
            .map(|r| r.domains.iter().map(DomainSpec::from).collect())
            .unwrap_or_default()
    }

    pub fn classification_spec(&self) -> Option<ClassificationSpec> {
        let c = self.classification.as_ref()?;
        let mut spec = ClassificationSpec::new(c.num_users, c.dim, c.train_per_user, c.test_per_user);
        spec.sizes = SplitSizes::new(c.train_per_user, c.validation_per_user, c.test_per_user);
        spec.max_rotation_deg = c.max_rotation_deg;
        spec.label_noise = c.label_noise;
        spec.domain_shift = c.domain_shift;
        spec.min_positive = c.min_positive;
        spec.max_positive = c.max_positive;
        spec.standardization = match c.standardize {
            StandardizeMode::PerUser => Standardization::PerUser,
            _ => Standardization::Pooled,
        };
        Some(spec)
    }

    /// Checks every invariant that can be checked without training.
    pub fn validate(&self) -> Result<()> {
        if self.sigma_grid.is_empty() {
            return Err(Error::config("sigma_grid", "must not be empty"));
        }
        for (i, &s) in self.sigma_grid.iter().enumerate() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::config("sigma_grid", format!("entry {i} ({s}) must be finite and >= 0")));
            }
            if i > 0 && s <= self.sigma_grid[i - 1] {
                return Err(Error::config("sigma_grid", "must be strictly increasing"));
            }
        }
        if !(self.train.clip_norm > 0.0) {
            return Err(Error::config("train.clip_norm", "must be > 0"));
        }
        for &s in &self.sigma_grid {
            self.train_config(Mode::FlDe, s)?;
        }
        if self.report.gate_grid_steps < 2 {
            return Err(Error::config("report.gate_grid_steps", "must be >= 2"));
        }

        let wanted = self.experiment.section();
        let present = [
            ("regression", self.regression.is_some()),
            ("classification", self.classification.is_some()),
            ("sparse", self.sparse.is_some()),
        ];
        for (name, is_present) in present {
            if is_present && name != wanted {
                return Err(Error::config(name, format!("section does not apply to experiment `{wanted}` data")));
            }
            if !is_present && name == wanted {
                return Err(Error::config(name, "section is required"));
            }
        }

        if let Some(r) = &self.regression {
            if r.domains.len() < 2 {
                return Err(Error::config("regression.domains", "need at least 2 domains (one per user)"));
            }
            for (i, d) in r.domains.iter().enumerate() {
                DomainSpec::from(d)
                    .cholesky()
                    .map_err(|e| in_section(&format!("regression.domains[{i}]"), e))?;
            }
            for (name, n) in [
                ("train_per_user", r.train_per_user),
                ("validation_per_user", r.validation_per_user),
                ("test_per_user", r.test_per_user),
            ] {
                if n == 0 {
                    return Err(Error::config(format!("regression.{name}"), "must be > 0"));
                }
            }
        }
        if let Some(spec) = self.classification_spec() {
            spec.validate().map_err(|e| in_section("classification", e))?;
        }
        if let Some(s) = &self.sparse {
            let path = s.path.as_ref().ok_or_else(|| Error::config("sparse.path", "is required"))?;
            if !path.is_file() {
                return Err(Error::config("sparse.path", format!("{} is not a readable file", path.display())));
            }
            if s.num_users < 2 {
                return Err(Error::config("sparse.num_users", "collaboration needs at least 2 users"));
            }
            if s.train_per_user == 0 {
                return Err(Error::config("sparse.train_per_user", "must be > 0"));
            }
            if s.dim == Some(0) {
                return Err(Error::config("sparse.dim", "must be > 0"));
            }
        }
        Ok(())
    }

    /// The config as TOML, without `output_dir`, so the text depends only on
    /// what determines the results.
    pub fn snapshot(&self) -> String {
        let mut cfg = self.clone();
        cfg.output_dir = None;
        toml::to_string(&cfg).expect("config serializes to TOML")
    }

    /// `sha256:` digest of [`Self::snapshot`].
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.snapshot().as_bytes());
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }

    /// Output directory by precedence: explicit flag, then environment, then
    /// config file, then [`DEFAULT_OUT_DIR`].
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

fn classification_train() -> TrainSection {
    TrainSection {
        rounds: 500,
        batch_size: 8,
        lr_general: 0.2,
        lr_private: 0.2,
        lr_decay: 0.5,
        lr_decay_stages: 4,
        l2: 0.0,
        clip_norm: 1.0,
    }
}

/// Reads a config file, or a bundled config when `source` names one and no
/// such file exists.
pub fn load(source: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let path = Path::new(source);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return parse_relative_to(&text, overrides, path.parent());
    }
    let name = source.strip_suffix(".toml").unwrap_or(source);
    match BUNDLED.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => parse(text, overrides),
        None => Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such config file or bundled config"),
        )),
    }
}

/// Resolves config text plus `key=value` overrides into a full config.
pub fn parse(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    parse_relative_to(text, overrides, None)
}

/// As [`parse`], with relative data paths taken relative to `base`.
pub fn parse_relative_to(text: &str, overrides: &[String], base: Option<&Path>) -> Result<ExperimentConfig> {
    let mut user: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.to_string().trim_end().to_string()))?;
    for ov in overrides {
        apply_override(&mut user, ov)?;
    }
    let kind = match user.get("experiment") {
        Some(Value::String(s)) => ExperimentKind::parse(s).ok_or_else(|| {
            Error::config(
                "experiment",
                format!("unknown kind `{s}` (expected synthetic_regression, synthetic_classification or sparse_file)"),
            )
        })?,
        Some(_) => return Err(Error::config("experiment", "must be a string")),
        None => return Err(Error::config("experiment", "is required")),
    };
    let mut merged = match Value::try_from(ExperimentConfig::defaults(kind)) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("defaults serialize to a table"),
    };
    merge(&mut merged, user);
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(Value::Table(merged)).map_err(|e| {
        let field = e.path().to_string();
        Error::config(field, e.into_inner().to_string())
    })?;
    if let (Some(base), Some(p)) = (base, cfg.sparse.as_mut().and_then(|s| s.path.as_mut())) {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Recursively lays `over` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Applies one `dotted.key=value` override. The value is read as a TOML value
/// when it parses as one, and as a bare string otherwise.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must have the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(spec, "override key is empty"));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut node = table;
    for part in parts {
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(Error::config(key, format!("`{part}` is not a table"))),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}
