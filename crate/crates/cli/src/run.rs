//! Batch execution: expands the experiment grid into cells, runs each episode,
//! and records every cell in a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use preact_core::agent::{
    catalog_entries, run_episode, template, template_hash, EpisodeConfig, EpisodeError,
};
use preact_core::envs::{builtin_spec, instantiate_template, reset};
use preact_core::llm::{ChatBackend, LlmError};
use preact_core::strategies::{
    run_with_reflexion, run_with_tot, PredictionBank, StrategyError, TotOptions,
};
use preact_core::{Framework, HistoryPolicy, Outcome, Retention, Trajectory};

use crate::config::{parse_mode, ExperimentConfig};
use crate::CliError;

/// One point of the (instance, framework, mode, seed) grid.
#[derive(Debug, Clone)]
pub struct Cell {
    pub instance: String,
    pub framework: Framework,
    pub mode: String,
    pub policy: HistoryPolicy,
    pub seed: u64,
}

impl Cell {
    /// File name of this cell's trajectory output.
    pub fn file_name(&self) -> String {
        format!(
            "{}__{}__{}__s{}.jsonl",
            self.instance.replace('/', "-"),
            self.framework,
            self.mode,
            self.seed
        )
    }

    /// Prediction retention is meaningless for frameworks that never predict,
    /// so those grid points are recorded but not run. Reflections are
    /// framework-independent.
    pub fn is_compatible(&self) -> bool {
        self.framework.is_predictive() || self.policy.retention == Retention::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Done,
    Failed,
    /// Not run: the call budget was already exhausted or ran out mid-cell.
    Skipped,
    /// Not run: the grid point is contradictory (retention without predictions).
    Incompatible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub instance: String,
    pub framework: Framework,
    pub mode: String,
    pub seed: u64,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The run's one-stop provenance record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub template_hashes: BTreeMap<String, String>,
    pub cells: Vec<CellRecord>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest_path: PathBuf,
    pub done: usize,
    pub failed: usize,
    pub skipped: usize,
    pub incompatible: usize,
    pub summary_table: String,
}

impl RunOutcome {
    /// True when at least one runnable cell did not finish.
    pub fn is_partial(&self) -> bool {
        self.failed > 0 || self.skipped > 0
    }
}

/// Expands the grid in deterministic nested order.
pub fn enumerate_cells(config: &ExperimentConfig) -> Result<Vec<Cell>, CliError> {
    let instances = config.resolved_instances().map_err(|e| CliError::Validation(e.to_string()))?;
    let mut cells = Vec::new();
    for instance in &instances {
        for framework in &config.frameworks {
            for mode in &config.modes {
                let policy = parse_mode(mode).map_err(|e| CliError::Validation(e.to_string()))?;
                for seed in &config.seeds {
                    cells.push(Cell {
                        instance: instance.clone(),
                        framework: *framework,
                        mode: mode.clone(),
                        policy,
                        seed: *seed,
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn budget_hit_episode(error: &EpisodeError) -> bool {
    matches!(error, EpisodeError::Backend(LlmError::BudgetExceeded { .. }))
}

fn budget_hit(error: &StrategyError) -> bool {
    match error {
        StrategyError::Backend(LlmError::BudgetExceeded { .. }) => true,
        StrategyError::Episode(e) => budget_hit_episode(e),
        _ => false,
    }
}

enum CellFailure {
    Budget(String),
    Other(String),
}

fn run_cell(
    backend: &dyn ChatBackend,
    config: &ExperimentConfig,
    bank: Option<&PredictionBank>,
    cell: &Cell,
) -> Result<Vec<Trajectory>, CellFailure> {
    let spec = builtin_spec(&cell.instance).map_err(|e| CellFailure::Other(e.to_string()))?;
    let base = template(spec.family, cell.framework)
        .map_err(|e| CellFailure::Other(e.to_string()))?;
    let template = instantiate_template(&base, &spec);
    let episode = EpisodeConfig {
        max_parse_retries: config.max_parse_retries,
        seed: cell.seed,
        ..EpisodeConfig::default()
    };
    let trajectories = if cell.policy.include_reflections {
        run_with_reflexion(
            backend,
            &spec,
            &template,
            cell.policy,
            &episode,
            config.reflexion_trials,
        )
        .map_err(|e| {
            if budget_hit(&e) {
                CellFailure::Budget(e.to_string())
            } else {
                CellFailure::Other(e.to_string())
            }
        })?
    } else if config.tot.n > 1 || config.tot.h > 0.0 {
        let options = TotOptions { n: config.tot.n, h: config.tot.h };
        let trajectory =
            run_with_tot(backend, &spec, &template, cell.policy, &episode, &options, bank)
                .map_err(|e| {
                    if budget_hit(&e) {
                        CellFailure::Budget(e.to_string())
                    } else {
                        CellFailure::Other(e.to_string())
                    }
                })?;
        vec![trajectory]
    } else {
        let mut env = reset(&spec).map_err(|e| CellFailure::Other(e.to_string()))?;
        let trajectory =
            run_episode(backend, env.as_mut(), &template, cell.policy, &episode, &[])
                .map_err(|e| {
                    if budget_hit_episode(&e) {
                        CellFailure::Budget(e.to_string())
                    } else {
                        CellFailure::Other(e.to_string())
                    }
                })?;
        vec![trajectory]
    };
    for t in &trajectories {
        t.validate().map_err(|e| CellFailure::Other(e.to_string()))?;
    }
    Ok(trajectories)
}

/// A cell succeeds when its final trajectory does; earlier records are the
/// retried trials of a reflection run.
fn cell_succeeded(trajectories: &[Trajectory]) -> bool {
    trajectories.last().is_some_and(|t| t.outcome == Outcome::Success)
}

struct CellResult {
    record: CellRecord,
    succeeded: Option<bool>,
    trajectories: Vec<Trajectory>,
}

fn execute_cells(
    config: &ExperimentConfig,
    cells: &[Cell],
) -> Result<Vec<CellResult>, CliError> {
    let backend = config.build_backend().map_err(|e| CliError::Validation(e.to_string()))?;
    let bank = match &config.tot.bank {
        Some(path) if config.tot.h > 0.0 => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read bank {}: {e}", path.display()))
            })?;
            Some(PredictionBank::from_jsonl(&text).map_err(|e| {
                CliError::Validation(format!("bad bank {}: {e}", path.display()))
            })?)
        }
        _ => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let mut record = CellRecord {
                    instance: cell.instance.clone(),
                    framework: cell.framework,
                    mode: cell.mode.clone(),
                    seed: cell.seed,
                    status: CellStatus::Done,
                    file: None,
                    error: None,
                };
                if !cell.is_compatible() {
                    record.status = CellStatus::Incompatible;
                    return CellResult { record, succeeded: None, trajectories: Vec::new() };
                }
                match run_cell(&backend, config, bank.as_ref(), cell) {
                    Ok(trajectories) => {
                        record.file = Some(cell.file_name());
                        CellResult {
                            record,
                            succeeded: Some(cell_succeeded(&trajectories)),
                            trajectories,
                        }
                    }
                    Err(CellFailure::Budget(message)) => {
                        record.status = CellStatus::Skipped;
                        record.error = Some(message);
                        CellResult { record, succeeded: None, trajectories: Vec::new() }
                    }
                    Err(CellFailure::Other(message)) => {
                        record.status = CellStatus::Failed;
                        record.error = Some(message);
                        CellResult { record, succeeded: None, trajectories: Vec::new() }
                    }
                }
            })
            .collect()
    });
    Ok(results)
}

fn write_outputs(
    config: &ExperimentConfig,
    results: &[CellResult],
) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| {
        CliError::Runtime(format!("cannot create {}: {e}", config.out_dir.display()))
    })?;
    for result in results {
        if let Some(file) = &result.record.file {
            let path = config.out_dir.join(file);
            let text = preact_core::write_trajectory_lines(&result.trajectories);
            std::fs::write(&path, text).map_err(|e| {
                CliError::Runtime(format!("cannot write {}: {e}", path.display()))
            })?;
        }
    }
    let manifest = Manifest {
        config_hash: config.hash(),
        template_hashes: catalog_entries()
            .into_iter()
            .map(|(name, text)| (name.to_string(), template_hash(text)))
            .collect(),
        cells: results.iter().map(|r| r.record.clone()).collect(),
    };
    let manifest_path = config.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text + "\n").map_err(|e| {
        CliError::Runtime(format!("cannot write {}: {e}", manifest_path.display()))
    })?;
    Ok(manifest_path)
}

fn count(results: &[CellResult], status: CellStatus) -> usize {
    results.iter().filter(|r| r.record.status == status).count()
}

/// Cell-level success fraction per (framework, mode), `None` when no cell of
/// that group ran to completion.
fn group_success_rates(results: &[CellResult]) -> BTreeMap<(String, String), (usize, f64)> {
    let mut groups: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for result in results {
        if let Some(succeeded) = result.succeeded {
            let key = (result.record.framework.to_string(), result.record.mode.clone());
            let entry = groups.entry(key).or_insert((0, 0));
            entry.0 += 1;
            entry.1 += usize::from(succeeded);
        }
    }
    groups
        .into_iter()
        .map(|(key, (cells, wins))| (key, (cells, 100.0 * wins as f64 / cells as f64)))
        .collect()
}

fn summary_table(results: &[CellResult]) -> String {
    let mut out = String::from("framework  mode     cells  SR%\n");
    for ((framework, mode), (cells, sr)) in group_success_rates(results) {
        out.push_str(&format!("{framework:<9}  {mode:<7}  {cells:<5}  {sr:.1}\n"));
    }
    out
}

/// Runs the full grid and writes trajectories plus the manifest.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    config.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let cells = enumerate_cells(config)?;
    let results = execute_cells(config, &cells)?;
    let manifest_path = write_outputs(config, &results)?;
    Ok(RunOutcome {
        manifest_path,
        done: count(&results, CellStatus::Done),
        failed: count(&results, CellStatus::Failed),
        skipped: count(&results, CellStatus::Skipped),
        incompatible: count(&results, CellStatus::Incompatible),
        summary_table: summary_table(&results),
    })
}

/// One row of the retention comparison: success percentages per mode label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub env: String,
    pub cells: usize,
    pub sr: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ablation {
    pub modes: Vec<String>,
    pub rows: Vec<AblationRow>,
    pub overall: AblationRow,
}

#[derive(Debug)]
pub struct AblateOutcome {
    pub run: RunOutcome,
    pub ablation_path: PathBuf,
    pub ablation: Ablation,
    pub table: String,
}

const RETENTION_MODES: [&str; 3] = ["0", "1", "all"];

fn ablation_rows(results: &[CellResult]) -> Ablation {
    let mut envs: BTreeMap<String, Vec<&CellResult>> = BTreeMap::new();
    for result in results {
        if result.succeeded.is_some() {
            let env = result
                .trajectories
                .first()
                .map(|t| t.env.clone())
                .unwrap_or_else(|| "unknown".into());
            envs.entry(env).or_default().push(result);
        }
    }
    let row = |env: String, group: &[&CellResult]| {
        let mut sr = BTreeMap::new();
        for mode in RETENTION_MODES {
            let of_mode: Vec<_> = group.iter().filter(|r| r.record.mode == mode).collect();
            if !of_mode.is_empty() {
                let wins = of_mode.iter().filter(|r| r.succeeded == Some(true)).count();
                sr.insert(mode.to_string(), 100.0 * wins as f64 / of_mode.len() as f64);
            }
        }
        AblationRow { env, cells: group.len(), sr }
    };
    let all: Vec<&CellResult> = envs.values().flatten().copied().collect();
    let rows = envs.iter().map(|(env, group)| row(env.clone(), group)).collect();
    Ablation {
        modes: RETENTION_MODES.iter().map(|m| m.to_string()).collect(),
        rows,
        overall: row("overall".into(), &all),
    }
}

fn ablation_table(ablation: &Ablation) -> String {
    let fmt = |row: &AblationRow, mode: &str| match row.sr.get(mode) {
        Some(sr) => format!("{sr:.1}"),
        None => "-".to_string(),
    };
    let mut out = String::from("env      SR(0)   SR(1)   SR(all)\n");
    for row in ablation.rows.iter().chain(std::iter::once(&ablation.overall)) {
        out.push_str(&format!(
            "{:<7}  {:<6}  {:<6}  {}\n",
            row.env,
            fmt(row, "0"),
            fmt(row, "1"),
            fmt(row, "all"),
        ));
    }
    out
}

/// Runs the prediction-retention comparison: the predictive framework over
/// modes 0, 1, and all, with the configured frameworks and modes ignored.
pub fn cmd_ablate_retention(config: &ExperimentConfig) -> Result<AblateOutcome, CliError> {
    let mut config = config.clone();
    config.frameworks = vec![Framework::PreAct];
    config.modes = RETENTION_MODES.iter().map(|m| m.to_string()).collect();
    config.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let cells = enumerate_cells(&config)?;
    let results = execute_cells(&config, &cells)?;
    let manifest_path = write_outputs(&config, &results)?;
    let ablation = ablation_rows(&results);
    let ablation_path = config.out_dir.join("ablation.json");
    let text = serde_json::to_string_pretty(&ablation).expect("ablation serializes");
    std::fs::write(&ablation_path, text + "\n").map_err(|e| {
        CliError::Runtime(format!("cannot write {}: {e}", ablation_path.display()))
    })?;
    let table = ablation_table(&ablation);
    let run = RunOutcome {
        manifest_path,
        done: count(&results, CellStatus::Done),
        failed: count(&results, CellStatus::Failed),
        skipped: count(&results, CellStatus::Skipped),
        incompatible: count(&results, CellStatus::Incompatible),
        summary_table: summary_table(&results),
    };
    Ok(AblateOutcome { run, ablation_path, ablation, table })
}

/// Collects every prediction block from the given trajectory files into a
/// bank file for later injection runs.
pub fn cmd_harvest_bank(inputs: &[PathBuf], out: &Path) -> Result<(usize, usize), CliError> {
    let files = crate::eval::collect_trajectory_files(inputs)?;
    let mut trajectories = Vec::new();
    for file in &files {
        let text = std::fs::read_to_string(file).map_err(|e| {
            CliError::Validation(format!("cannot read {}: {e}", file.display()))
        })?;
        let mut batch = preact_core::read_trajectory_lines(&text).map_err(|e| {
            CliError::Validation(format!("bad trajectory in {}: {e}", file.display()))
        })?;
        trajectories.append(&mut batch);
    }
    let bank = PredictionBank::from_trajectories(trajectories.iter());
    std::fs::write(out, bank.to_jsonl())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", out.display())))?;
    Ok((trajectories.len(), bank.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BackendConfig;

    fn scripted_config(dir: &Path, instances: Vec<String>) -> ExperimentConfig {
        let policy = preact_core::llm::ScriptedPolicy::with_default("nonsense");
        let script = dir.join("policy.json");
        std::fs::write(&script, serde_json::to_string(&policy).unwrap()).unwrap();
        ExperimentConfig {
            instances,
            frameworks: vec![Framework::PreAct, Framework::ReAct],
            modes: vec!["0".into(), "all".into()],
            backend: Some(BackendConfig::Scripted(script)),
            out_dir: dir.join("out"),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn the_grid_expands_in_nested_order_and_marks_incompatible_cells() {
        let dir = tempfile::tempdir().unwrap();
        let config = scripted_config(dir.path(), vec!["db/plain-orders".into()]);
        let cells = enumerate_cells(&config).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0].framework, Framework::PreAct);
        assert_eq!(cells[0].mode, "0");
        assert!(cells.iter().all(|c| c.instance == "db/plain-orders"));
        let incompatible: Vec<_> = cells.iter().filter(|c| !c.is_compatible()).collect();
        assert_eq!(incompatible.len(), 1);
        assert_eq!(incompatible[0].framework, Framework::ReAct);
        assert_eq!(incompatible[0].mode, "all");
    }

    #[test]
    fn a_run_writes_files_for_every_completed_cell_and_one_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let config = scripted_config(dir.path(), vec!["db/plain-orders".into()]);
        let outcome = cmd_run(&config).unwrap();
        // The nonsense script never parses, so every compatible cell still
        // completes with a ParseFailure trajectory.
        assert_eq!(outcome.done, 3);
        assert_eq!(outcome.incompatible, 1);
        assert!(!outcome.is_partial());
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(outcome.manifest_path).unwrap())
                .unwrap();
        assert_eq!(manifest.cells.len(), 4);
        assert_eq!(manifest.config_hash, config.hash());
        assert_eq!(manifest.template_hashes.len(), 12);
        for cell in &manifest.cells {
            match cell.status {
                CellStatus::Done => {
                    let file = config.out_dir.join(cell.file.as_ref().unwrap());
                    let text = std::fs::read_to_string(file).unwrap();
                    assert_eq!(preact_core::read_trajectory_lines(&text).unwrap().len(), 1);
                }
                CellStatus::Incompatible => assert!(cell.file.is_none()),
                other => panic!("unexpected status {other:?}"),
            }
        }
    }

    #[test]
    fn an_exhausted_budget_skips_the_remaining_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = scripted_config(dir.path(), vec!["db/plain-orders".into()]);
        config.call_budget = 1;
        let outcome = cmd_run(&config).unwrap();
        assert!(outcome.is_partial());
        assert!(outcome.skipped >= 2, "one call cannot cover three cells");
    }
}
