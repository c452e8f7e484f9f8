//! Runs one experiment: Baseline once, then FL and FL+DE for every sigma.

use std::fs;
use std::path::{Path, PathBuf};

use flde_core::data::{
    generate_classification_shards, generate_regression_shards, standardize, standardize_pooled, validate_shards,
    SplitSizes,
};
use flde_core::federation::{evaluate, run_baseline, run_fl, run_flde};
use flde_core::math::mean_std;
use flde_core::report::{domain_box, gate_grid, summarize, system_name, AxisRange, GateGrid, RunReport};
use flde_core::{Mode, Predictor, TaskKind, UserShard};

use crate::config::{ExperimentConfig, ExperimentKind, StandardizeMode};
use crate::error::{Error, Result};
use crate::output;
use crate::sparse::{load_sparse_dataset, SparseOptions};

/// Gate values of one user's trained FL+DE gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateExport {
    pub sigma: f64,
    pub user_id: usize,
    pub grid: GateGrid,
}

impl GateExport {
    pub fn file_name(&self) -> String {
        format!("flde_sigma{}_user{}.csv", self.sigma, self.user_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub report: RunReport,
    /// Empty unless the inputs are 2-d.
    pub gate_grids: Vec<GateExport>,
    pub warnings: Vec<String>,
}

pub struct Dataset {
    pub shards: Vec<UserShard>,
    pub task: TaskKind,
    /// Region the gate grids cover, when the inputs are 2-d.
    pub grid_box: Option<(AxisRange, AxisRange)>,
    pub warnings: Vec<String>,
}

/// Generates or loads the per-user shards the config describes.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let task = cfg.task();
    let mut warnings = Vec::new();
    let shards = match cfg.experiment {
        ExperimentKind::SyntheticRegression => {
            let r = cfg.regression.as_ref().ok_or_else(|| Error::config("regression", "section is required"))?;
            let sizes = SplitSizes::new(r.train_per_user, r.validation_per_user, r.test_per_user);
            generate_regression_shards(&cfg.domain_specs(), sizes, cfg.seed)
                .map_err(|e| crate::error::in_section("regression", e))?
        }
        ExperimentKind::SyntheticClassification => {
            let spec = cfg
                .classification_spec()
                .ok_or_else(|| Error::config("classification", "section is required"))?;
            generate_classification_shards(&spec, cfg.seed)
                .map_err(|e| crate::error::in_section("classification", e))?
        }
        ExperimentKind::SparseFile => {
            let s = cfg.sparse.as_ref().ok_or_else(|| Error::config("sparse", "section is required"))?;
            let path = s.path.as_ref().ok_or_else(|| Error::config("sparse.path", "is required"))?;
            let opts = SparseOptions {
                num_users: s.num_users,
                dim: s.dim,
                task,
                train_per_user: s.train_per_user,
                validation_per_user: s.validation_per_user,
            };
            let mut data = load_sparse_dataset(path, &opts)?;
            warnings.append(&mut data.warnings);
            match s.standardize {
                StandardizeMode::None => {}
                StandardizeMode::PerUser => data.shards.iter_mut().for_each(standardize),
                StandardizeMode::Pooled => standardize_pooled(&mut data.shards),
            }
            data.shards
        }
    };
    let dim = shards.iter().find_map(|s| s.train.first()).map_or(0, |e| e.features.len());
    let grid_box = match (cfg.experiment, dim) {
        (ExperimentKind::SyntheticRegression, _) => domain_box(&cfg.domain_specs()),
        (_, 2) => Some(feature_box(&shards)),
        _ => None,
    };
    Ok(Dataset {
        shards,
        task,
        grid_box,
        warnings,
    })
}

/// `mean ± 3 std` of each coordinate over every user's training inputs.
fn feature_box(shards: &[UserShard]) -> (AxisRange, AxisRange) {
    let axis = |k: usize| {
        let col: Vec<f64> = shards.iter().flat_map(|s| s.train.iter().map(move |e| e.features[k])).collect();
        let (m, sd) = mean_std(&col);
        let half = if sd > 0.0 { 3.0 * sd } else { 1.0 };
        AxisRange::new(m - half, m + half)
    };
    (axis(0), axis(1))
}

fn cell_name(mode: Mode, sigma: f64) -> String {
    match mode {
        Mode::Baseline => String::from("baseline"),
        _ => format!("{} sigma={sigma}", system_name(mode)),
    }
}

/// Trains and evaluates every cell on one shared dataset.
pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    cfg.validate()?;
    let data = build_dataset(cfg)?;
    run_on(cfg, data)
}

/// Trains on an already built dataset. Every user needs at least one
/// training and one test example.
pub fn run_on(cfg: &ExperimentConfig, data: Dataset) -> Result<Artifacts> {
    let shards = &data.shards;
    for shard in shards {
        if shard.train.is_empty() || shard.test.is_empty() {
            return Err(Error::config(
                "num_users",
                format!("user {} needs at least one training and one test example", shard.user_id),
            ));
        }
    }
    validate_shards(shards, data.task).map_err(|e| Error::training("data", e))?;
    let task = data.task;
    let mut report = RunReport::new(task, shards.len(), cfg.digest());
    let mut gate_grids = Vec::new();

    let name = cell_name(Mode::Baseline, 0.0);
    let tc = cfg.train_config(Mode::Baseline, 0.0)?;
    let models = run_baseline(shards, &tc).map_err(|e| Error::training(&name, e))?;
    let metrics = evaluate(Predictor::PerUser(&models), shards, task).map_err(|e| Error::training(&name, e))?;
    report.insert(Mode::Baseline, 0.0, metrics);

    for &sigma in &cfg.sigma_grid {
        let name = cell_name(Mode::Fl, sigma);
        let tc = cfg.train_config(Mode::Fl, sigma)?;
        let general = run_fl(shards, &tc).map_err(|e| Error::training(&name, e))?;
        let metrics =
            evaluate(Predictor::Shared(&general.model), shards, task).map_err(|e| Error::training(&name, e))?;
        report.insert(Mode::Fl, sigma, metrics);

        let name = cell_name(Mode::FlDe, sigma);
        let tc = cfg.train_config(Mode::FlDe, sigma)?;
        let outcome = run_flde(shards, &tc).map_err(|e| Error::training(&name, e))?;
        let metrics = evaluate(Predictor::Mixed(&outcome.general.model, &outcome.private), shards, task)
            .map_err(|e| Error::training(&name, e))?;
        report.insert(Mode::FlDe, sigma, metrics);

        if let Some((x1, x2)) = data.grid_box {
            for (user_id, state) in outcome.private.iter().enumerate() {
                let grid = gate_grid(&state.gate, x1, x2, cfg.report.gate_grid_steps)
                    .map_err(|e| Error::training(&name, e))?;
                gate_grids.push(GateExport { sigma, user_id, grid });
            }
        }
    }
    Ok(Artifacts {
        report,
        gate_grids,
        warnings: data.warnings,
    })
}

fn csv_bytes(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `summary.csv`, `resolved_config.toml` and, when
/// present, `gates/*.csv` under `dir`. Returns the paths written.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, artifacts: &Artifacts) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    let bytes = csv_bytes(&path, |b| output::write_results(b, &artifacts.report))?;
    write_file(&path, &bytes)?;
    written.push(path);

    let path = dir.join("summary.csv");
    let rows = summarize(&artifacts.report).map_err(|e| Error::training("summary", e))?;
    let bytes = csv_bytes(&path, |b| output::write_summary(b, &rows))?;
    write_file(&path, &bytes)?;
    written.push(path);

    let path = dir.join("resolved_config.toml");
    let text = format!("# config digest: {}\n{}", artifacts.report.config_digest, cfg.snapshot());
    write_file(&path, text.as_bytes())?;
    written.push(path);

    if !artifacts.gate_grids.is_empty() {
        let gates = dir.join("gates");
        fs::create_dir_all(&gates).map_err(|e| Error::io(&gates, e))?;
        for g in &artifacts.gate_grids {
            let path = gates.join(g.file_name());
            let bytes = csv_bytes(&path, |b| output::write_gate_grid(b, &g.grid))?;
            write_file(&path, &bytes)?;
            written.push(path);
        }
    }
    Ok(written)
}
