//! Metric reporting over trajectory files: grouped summaries as line records
//! plus a human-readable table.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use preact_core::envs::builtin_spec;
use preact_core::eval::{
    action_diversity_proxy, diversity_summary, judge_diversity, judge_diversity_seeded,
    oracle_transcript, strategy_metric, strategy_scores, success_rate, trajectory_transcript,
    DiversityJudgment, EvalError,
};
use preact_core::llm::{ChatBackend, ScriptedPolicy};
use preact_core::{read_trajectory_lines, Framework, Trajectory};

use crate::CliError;

/// Mode label recovered from a run file name, `unknown` for foreign files.
fn mode_from_file_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let parts: Vec<&str> = stem.split("__").collect();
    if parts.len() == 4 {
        parts[2].to_string()
    } else {
        "unknown".to_string()
    }
}

/// Expands files and directories into a sorted list of `.jsonl` files.
pub fn collect_trajectory_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries = std::fs::read_dir(input).map_err(|e| {
                CliError::Validation(format!("cannot read {}: {e}", input.display()))
            })?;
            for entry in entries {
                let path = entry
                    .map_err(|e| CliError::Validation(e.to_string()))?
                    .path();
                if path.extension().is_some_and(|ext| ext == "jsonl") {
                    files.push(path);
                }
            }
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            return Err(CliError::Validation(format!(
                "no such file or directory: {}",
                input.display()
            )));
        }
    }
    files.sort();
    files.dedup();
    if files.is_empty() {
        return Err(CliError::Validation("no trajectory files found".into()));
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
struct GroupKey {
    env: String,
    framework: Framework,
    mode: String,
}

/// Win/loss/tie fractions of a group against the plain baseline group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityCell {
    pub baseline: String,
    pub pairs: usize,
    pub wins: f64,
    pub losses: f64,
    pub ties: f64,
}

/// One summary line of the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSummary {
    pub env: String,
    pub framework: Framework,
    pub mode: String,
    pub trajectories: usize,
    /// Success percentage, 0 to 100.
    pub success_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_gp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_diversity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversityCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportRecord {
    Summary(GroupSummary),
    Warning { message: String },
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub inputs: Vec<PathBuf>,
    /// Scripted judge policy file; judge metrics are skipped without it.
    pub judge: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Present each judged pair in seed-decided order instead of as-is.
    pub randomize_order: bool,
    pub judge_seed: u64,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report_path: Option<PathBuf>,
    pub table: String,
    pub records: Vec<ReportRecord>,
}

fn load_groups(
    files: &[PathBuf],
) -> Result<BTreeMap<GroupKey, Vec<Trajectory>>, CliError> {
    let mut groups: BTreeMap<GroupKey, Vec<Trajectory>> = BTreeMap::new();
    for file in files {
        let text = std::fs::read_to_string(file).map_err(|e| {
            CliError::Validation(format!("cannot read {}: {e}", file.display()))
        })?;
        let trajectories = read_trajectory_lines(&text).map_err(|e| {
            CliError::Validation(format!("bad trajectory in {}: {e}", file.display()))
        })?;
        let mode = mode_from_file_name(file);
        for t in trajectories {
            let key = GroupKey { env: t.env.clone(), framework: t.framework, mode: mode.clone() };
            groups.entry(key).or_default().push(t);
        }
    }
    if groups.values().all(|g| g.is_empty()) {
        return Err(CliError::Validation(EvalError::EmptyInput.to_string()));
    }
    for group in groups.values_mut() {
        group.sort_by(|a, b| (&a.task_id, a.seed).cmp(&(&b.task_id, b.seed)));
    }
    Ok(groups)
}

fn proxy_mean(group: &[Trajectory]) -> Option<f64> {
    let values: Vec<f64> =
        group.iter().filter_map(|t| action_diversity_proxy(t).ok()).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn group_strategy(
    judge: &dyn ChatBackend,
    key: &GroupKey,
    group: &[Trajectory],
    warnings: &mut Vec<String>,
) -> Option<f64> {
    let mut missing: BTreeSet<String> = BTreeSet::new();
    let mut per_trajectory: Vec<Vec<i64>> = Vec::new();
    for t in group {
        let spec = match builtin_spec(&t.task_id) {
            Ok(spec) => spec,
            Err(_) => {
                missing.insert(t.task_id.clone());
                continue;
            }
        };
        match strategy_scores(judge, &oracle_transcript(&spec), t) {
            Ok(scores) => per_trajectory.push(scores),
            Err(e) => {
                warnings.push(format!(
                    "strategy scoring failed for {} in {}/{}/{}: {e}",
                    t.task_id, key.env, key.framework, key.mode
                ));
                return None;
            }
        }
    }
    for task in missing {
        warnings.push(format!(
            "no ground truth for {task}; strategy metric skips it in {}/{}/{}",
            key.env, key.framework, key.mode
        ));
    }
    match strategy_metric(&per_trajectory) {
        Ok(value) => Some(value),
        Err(EvalError::EmptyInput) | Err(EvalError::AllExcluded) => None,
        Err(e) => {
            warnings.push(format!(
                "strategy metric failed for {}/{}/{}: {e}",
                key.env, key.framework, key.mode
            ));
            None
        }
    }
}

/// Judges a group against the plain baseline group of the same environment,
/// pairing trajectories by (task, seed).
fn group_diversity(
    judge: &dyn ChatBackend,
    args: &EvalArgs,
    key: &GroupKey,
    group: &[Trajectory],
    baseline: &[Trajectory],
    warnings: &mut Vec<String>,
) -> Option<DiversityCell> {
    let by_pair: BTreeMap<(&str, u64), &Trajectory> =
        baseline.iter().map(|t| ((t.task_id.as_str(), t.seed), t)).collect();
    let mut judgments: Vec<DiversityJudgment> = Vec::new();
    let mut pair_index = 0u64;
    for t in group {
        let Some(other) = by_pair.get(&(t.task_id.as_str(), t.seed)) else {
            continue;
        };
        let a = trajectory_transcript(t);
        let b = trajectory_transcript(other);
        let judged = if args.randomize_order {
            judge_diversity_seeded(judge, &a, &b, args.judge_seed.wrapping_add(pair_index))
                .map(|(judgment, _)| judgment)
        } else {
            judge_diversity(judge, &a, &b, false)
        };
        pair_index += 1;
        match judged {
            Ok(judgment) => judgments.push(judgment),
            Err(e) => {
                warnings.push(format!(
                    "diversity judging failed for {} seed {} in {}/{}/{}: {e}",
                    t.task_id, t.seed, key.env, key.framework, key.mode
                ));
            }
        }
    }
    let summary = diversity_summary(&judgments).ok()?;
    Some(DiversityCell {
        baseline: format!("{}/{}", Framework::ReAct, "0"),
        pairs: judgments.len(),
        wins: summary.a_wins,
        losses: summary.b_wins,
        ties: summary.ties,
    })
}

fn render_table(records: &[ReportRecord]) -> String {
    let mut out = String::from(
        "env  framework  mode     n    SR%    NGP    proxy  strategy  div W/T/L vs ReAct/0\n",
    );
    let opt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.2}"),
        None => "-".to_string(),
    };
    for record in records {
        let ReportRecord::Summary(s) = record else { continue };
        let diversity = match &s.diversity {
            Some(d) => format!("{:.2}/{:.2}/{:.2} ({} pairs)", d.wins, d.ties, d.losses, d.pairs),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<3}  {:<9}  {:<7}  {:<3}  {:<5.1}  {:<5}  {:<5}  {:<8}  {}\n",
            s.env,
            s.framework.to_string(),
            s.mode,
            s.trajectories,
            s.success_rate,
            opt(s.normalized_gp),
            opt(s.action_diversity),
            opt(s.strategy),
            diversity,
        ));
    }
    let warnings: Vec<&str> = records
        .iter()
        .filter_map(|r| match r {
            ReportRecord::Warning { message } => Some(message.as_str()),
            _ => None,
        })
        .collect();
    if !warnings.is_empty() {
        out.push_str("\nwarnings:\n");
        for w in warnings {
            out.push_str(&format!("  {w}\n"));
        }
    }
    out
}

/// Computes grouped metrics over the input files and writes the report.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome, CliError> {
    let files = collect_trajectory_files(&args.inputs)?;
    let groups = load_groups(&files)?;
    let judge: Option<Box<dyn ChatBackend>> = match &args.judge {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read {}: {e}", path.display()))
            })?;
            Some(Box::new(ScriptedPolicy::from_json(&text).map_err(|e| {
                CliError::Validation(format!("bad judge policy {}: {e}", path.display()))
            })?))
        }
        None => None,
    };

    let mut warnings: Vec<String> = Vec::new();
    let mut summaries: Vec<GroupSummary> = Vec::new();
    for (key, group) in &groups {
        let sr = success_rate(group).map_err(|e| CliError::Validation(e.to_string()))?;
        let normalized_gp = if key.env == "ltp" {
            match preact_core::eval::normalized_gp(group) {
                Ok(value) => Some(value),
                Err(EvalError::AllExcluded) => {
                    warnings.push(format!(
                        "every ltp trajectory in {}/{}/{} is a refusal; no goal progress to report",
                        key.env, key.framework, key.mode
                    ));
                    None
                }
                Err(e) => return Err(CliError::Validation(e.to_string())),
            }
        } else {
            None
        };
        let strategy = judge
            .as_ref()
            .and_then(|j| group_strategy(j, key, group, &mut warnings));
        let baseline_key = GroupKey {
            env: key.env.clone(),
            framework: Framework::ReAct,
            mode: "0".to_string(),
        };
        let diversity = match (&judge, groups.get(&baseline_key)) {
            (Some(j), Some(baseline)) if *key != baseline_key => {
                group_diversity(j.as_ref(), args, key, group, baseline, &mut warnings)
            }
            _ => None,
        };
        summaries.push(GroupSummary {
            env: key.env.clone(),
            framework: key.framework,
            mode: key.mode.clone(),
            trajectories: group.len(),
            success_rate: 100.0 * sr,
            normalized_gp,
            action_diversity: proxy_mean(group),
            strategy,
            diversity,
        });
    }

    let mut records: Vec<ReportRecord> =
        summaries.into_iter().map(ReportRecord::Summary).collect();
    records.extend(warnings.into_iter().map(|message| ReportRecord::Warning { message }));
    let table = render_table(&records);

    let report_path = match &args.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| {
                CliError::Runtime(format!("cannot create {}: {e}", dir.display()))
            })?;
            let path = dir.join("report.jsonl");
            let mut text = String::new();
            for record in &records {
                text.push_str(&serde_json::to_string(record).expect("record serializes"));
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| {
                CliError::Runtime(format!("cannot write {}: {e}", path.display()))
            })?;
            let table_path = dir.join("table.txt");
            std::fs::write(&table_path, &table).map_err(|e| {
                CliError::Runtime(format!("cannot write {}: {e}", table_path.display()))
            })?;
            Some(path)
        }
        None => None,
    };
    Ok(EvalOutcome { report_path, table, records })
}

/// Re-renders a saved report as the human-readable table.
pub fn cmd_report(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: ReportRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Validation(format!("bad report record in {}: {e}", path.display()))
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(CliError::Validation(format!("{} holds no records", path.display())));
    }
    Ok(render_table(&records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use preact_core::{write_trajectory_lines, Outcome, Step};

    fn fixture(task_id: &str, env: &str, framework: Framework, outcome: Outcome) -> Trajectory {
        let success = outcome == Outcome::Success;
        Trajectory {
            task_id: task_id.into(),
            env: env.into(),
            framework,
            o0: "start".into(),
            steps: vec![Step {
                index: 1,
                thought: "look".into(),
                action: "go to shelf 1".into(),
                prediction: if framework.is_predictive() {
                    vec![preact_core::PredictedOutcome {
                        category: "it works".into(),
                        measure: "continue".into(),
                    }]
                } else {
                    Vec::new()
                },
                observation: Some("done".into()),
            }],
            reflections: Vec::new(),
            outcome,
            score: if success { 1.0 } else { 0.0 },
            seed: 0,
        }
    }

    #[test]
    fn grouping_splits_by_environment_framework_and_file_mode() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("x__PreAct__all__s0.jsonl");
        std::fs::write(
            &a,
            write_trajectory_lines(&[
                fixture("hh/a", "hh", Framework::PreAct, Outcome::Success),
                fixture("hh/b", "hh", Framework::PreAct, Outcome::Failure),
            ]),
        )
        .unwrap();
        let b = dir.path().join("x__ReAct__0__s0.jsonl");
        std::fs::write(
            &b,
            write_trajectory_lines(&[fixture("hh/a", "hh", Framework::ReAct, Outcome::Success)]),
        )
        .unwrap();
        let outcome = cmd_eval(&EvalArgs {
            inputs: vec![dir.path().to_path_buf()],
            ..EvalArgs::default()
        })
        .unwrap();
        let summaries: Vec<_> = outcome
            .records
            .iter()
            .filter_map(|r| match r {
                ReportRecord::Summary(s) => Some(s),
                _ => None,
            })
            .collect();
        assert_eq!(summaries.len(), 2);
        assert_eq!(summaries[0].framework, Framework::ReAct);
        assert_eq!(summaries[0].mode, "0");
        assert_eq!(summaries[0].success_rate, 100.0);
        assert_eq!(summaries[1].framework, Framework::PreAct);
        assert_eq!(summaries[1].mode, "all");
        assert_eq!(summaries[1].success_rate, 50.0);
    }

    #[test]
    fn eval_of_an_empty_file_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let err = cmd_eval(&EvalArgs { inputs: vec![path], ..EvalArgs::default() }).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
    }

    #[test]
    fn scripted_judge_produces_diversity_fractions_against_the_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("x__PreAct__all__s0.jsonl");
        std::fs::write(
            &a,
            write_trajectory_lines(&[fixture(
                "hh/trap-lettuce",
                "hh",
                Framework::PreAct,
                Outcome::Success,
            )]),
        )
        .unwrap();
        let b = dir.path().join("x__ReAct__0__s0.jsonl");
        std::fs::write(
            &b,
            write_trajectory_lines(&[fixture(
                "hh/trap-lettuce",
                "hh",
                Framework::ReAct,
                Outcome::Failure,
            )]),
        )
        .unwrap();
        let judge = ScriptedPolicy::with_default(
            "Score 1: 70\nScore 2: 40\nLast Round Replan Score: 2",
        );
        let judge_path = dir.path().join("judge.json");
        std::fs::write(&judge_path, serde_json::to_string(&judge).unwrap()).unwrap();
        let out_dir = dir.path().join("report");
        let outcome = cmd_eval(&EvalArgs {
            inputs: vec![a, b],
            judge: Some(judge_path),
            out_dir: Some(out_dir.clone()),
            ..EvalArgs::default()
        })
        .unwrap();
        let preact = outcome
            .records
            .iter()
            .find_map(|r| match r {
                ReportRecord::Summary(s) if s.framework == Framework::PreAct => Some(s),
                _ => None,
            })
            .unwrap();
        let diversity = preact.diversity.as_ref().unwrap();
        assert_eq!(diversity.wins, 1.0);
        assert_eq!(diversity.ties, 0.0);
        assert_eq!(preact.strategy, Some(2.0));
        assert_eq!(cmd_report(&out_dir.join("report.jsonl")).unwrap(), outcome.table);
        let baseline = outcome
            .records
            .iter()
            .find_map(|r| match r {
                ReportRecord::Summary(s) if s.framework == Framework::ReAct => Some(s),
                _ => None,
            })
            .unwrap();
        assert!(baseline.diversity.is_none(), "the baseline is not judged against itself");
    }
}
