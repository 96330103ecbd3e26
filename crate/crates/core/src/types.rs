//! Shared record types: steps, trajectories, history policies, and the
//! line-oriented trajectory serialization used by every tool in the workspace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Agent loop variant driving a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Framework {
    ReAct,
    PreAct,
    ActOnly,
}

impl Framework {
    pub fn is_predictive(self) -> bool {
        matches!(self, Framework::PreAct)
    }
}

impl std::fmt::Display for Framework {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Framework::ReAct => "ReAct",
            Framework::PreAct => "PreAct",
            Framework::ActOnly => "ActOnly",
        };
        f.write_str(s)
    }
}

/// Environment family a task belongs to. `Qa` ships prompt templates only;
/// the other four have local simulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvFamily {
    Hh,
    Os,
    Db,
    Ltp,
    Qa,
}

impl std::fmt::Display for EnvFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EnvFamily::Hh => "hh",
            EnvFamily::Os => "os",
            EnvFamily::Db => "db",
            EnvFamily::Ltp => "ltp",
            EnvFamily::Qa => "qa",
        };
        f.write_str(s)
    }
}

/// How many past prediction blocks stay in the assembled history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retention {
    #[serde(alias = "0")]
    None,
    #[serde(alias = "1")]
    Last,
    All,
}

/// History assembly knobs: prediction retention plus an optional reflection
/// prefix carried across trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryPolicy {
    pub retention: Retention,
    #[serde(default)]
    pub include_reflections: bool,
}

impl HistoryPolicy {
    pub const fn new(retention: Retention, include_reflections: bool) -> Self {
        HistoryPolicy { retention, include_reflections }
    }

    /// Plain ReAct history: no predictions, no reflections.
    pub const fn react() -> Self {
        Self::new(Retention::None, false)
    }

    /// Only the latest prediction block survives.
    pub const fn immediate() -> Self {
        Self::new(Retention::Last, false)
    }

    /// Every prediction block survives.
    pub const fn permanent() -> Self {
        Self::new(Retention::All, false)
    }

    /// Permanent retention plus reflections from earlier trials.
    pub const fn reflexion() -> Self {
        Self::new(Retention::All, true)
    }

    /// Compact label used in file names and report rows, e.g. `all+ref`.
    pub fn label(&self) -> String {
        let base = match self.retention {
            Retention::None => "0",
            Retention::Last => "1",
            Retention::All => "all",
        };
        if self.include_reflections {
            format!("{base}+ref")
        } else {
            base.to_string()
        }
    }
}

/// One predicted feedback category with the measure planned for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedOutcome {
    pub category: String,
    pub measure: String,
}

impl PredictedOutcome {
    pub fn new(category: impl Into<String>, measure: impl Into<String>) -> Self {
        PredictedOutcome { category: category.into(), measure: measure.into() }
    }
}

/// One completed turn. `observation` is absent only while the environment
/// reply for the latest turn is still pending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub thought: String,
    pub action: String,
    pub prediction: Vec<PredictedOutcome>,
    pub observation: Option<String>,
}

/// Terminal status of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failure,
    MaxTurnsExceeded,
    Refusal,
    ParseFailure,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Outcome::Success => "Success",
            Outcome::Failure => "Failure",
            Outcome::MaxTurnsExceeded => "MaxTurnsExceeded",
            Outcome::Refusal => "Refusal",
            Outcome::ParseFailure => "ParseFailure",
        };
        f.write_str(s)
    }
}

/// Full episode record. Field order here is the wire order; serialization is
/// deterministic so identical runs produce byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub env: String,
    pub framework: Framework,
    pub o0: String,
    pub steps: Vec<Step>,
    pub reflections: Vec<String>,
    pub outcome: Outcome,
    pub score: f64,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    /// The line is not a well-formed record at all.
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    /// The record parsed but violates a type invariant.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl Trajectory {
    /// Checks the cross-field invariants that serde cannot express.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let fail = |msg: String| Err(TrajectoryError::InvariantViolation(msg));
        if self.task_id.trim().is_empty() {
            return fail("task_id is empty".into());
        }
        if !(0.0..=1.0).contains(&self.score) {
            return fail(format!("score {} outside [0, 1]", self.score));
        }
        if self.outcome == Outcome::Success && self.score != 1.0 {
            return fail(format!("outcome Success with score {}", self.score));
        }
        let n = self.steps.len();
        for (pos, step) in self.steps.iter().enumerate() {
            if step.index != pos + 1 {
                return fail(format!(
                    "step at position {pos} has index {}, expected {}",
                    step.index,
                    pos + 1
                ));
            }
            if step.action.trim().is_empty() {
                return fail(format!("step {} has an empty action", step.index));
            }
            if step.observation.is_none() && pos + 1 != n {
                return fail(format!(
                    "step {} lacks an observation but is not the latest step",
                    step.index
                ));
            }
            for p in &step.prediction {
                if p.category.trim().is_empty() {
                    return fail(format!("step {} has a prediction with an empty category", step.index));
                }
            }
            match self.framework {
                Framework::PreAct => {
                    if step.prediction.is_empty() {
                        return fail(format!("PreAct step {} has no predictions", step.index));
                    }
                }
                Framework::ReAct | Framework::ActOnly => {
                    if !step.prediction.is_empty() {
                        return fail(format!(
                            "{} step {} carries predictions",
                            self.framework, step.index
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Renders one trajectory as a single line with a fixed field order.
pub fn serialize_trajectory(trajectory: &Trajectory) -> String {
    serde_json::to_string(trajectory).expect("trajectory serialization is infallible")
}

/// Parses one line back into a trajectory, enforcing the type invariants.
pub fn deserialize_trajectory(line: &str) -> Result<Trajectory, TrajectoryError> {
    let trajectory: Trajectory = serde_json::from_str(line)
        .map_err(|e| TrajectoryError::MalformedRecord(e.to_string()))?;
    trajectory.validate()?;
    Ok(trajectory)
}

/// Reads a whole trajectory file: one record per non-empty line.
pub fn read_trajectory_lines(text: &str) -> Result<Vec<Trajectory>, TrajectoryError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(deserialize_trajectory)
        .collect()
}

/// Writes records one per line with a trailing newline.
pub fn write_trajectory_lines(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        out.push_str(&serialize_trajectory(t));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(index: usize, action: &str, predictions: usize) -> Step {
        Step {
            index,
            thought: format!("thought {index}"),
            action: action.to_string(),
            prediction: (0..predictions)
                .map(|i| PredictedOutcome::new(format!("category {i}."), "retry."))
                .collect(),
            observation: Some(format!("observation {index}")),
        }
    }

    fn preact_trajectory() -> Trajectory {
        Trajectory {
            task_id: "hh/plain-apple".into(),
            env: "hh/plain-apple".into(),
            framework: Framework::PreAct,
            o0: "You are in a room.".into(),
            steps: vec![step(1, "go to fridge 1", 2), step(2, "open fridge 1", 1)],
            reflections: vec![],
            outcome: Outcome::Failure,
            score: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn round_trips_and_keeps_field_order() {
        let t = preact_trajectory();
        let line = serialize_trajectory(&t);
        assert!(line.starts_with("{\"task_id\":"));
        let back = deserialize_trajectory(&line).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn missing_action_field_is_malformed() {
        let line = r#"{"task_id":"x","env":"x","framework":"ReAct","o0":"o","steps":[{"index":1,"thought":"","prediction":[],"observation":"o1"}],"reflections":[],"outcome":"Failure","score":0.0,"seed":0}"#;
        let err = deserialize_trajectory(line).unwrap_err();
        assert!(matches!(err, TrajectoryError::MalformedRecord(_)));
    }

    #[test]
    fn non_contiguous_indices_violate_invariants() {
        let mut t = preact_trajectory();
        t.steps[1].index = 4;
        let line = serde_json::to_string(&t).unwrap();
        let err = deserialize_trajectory(&line).unwrap_err();
        assert!(matches!(err, TrajectoryError::InvariantViolation(_)));
    }

    #[test]
    fn empty_steps_with_initial_observation_is_valid() {
        let mut t = preact_trajectory();
        t.steps.clear();
        t.validate().unwrap();
    }

    #[test]
    fn pending_observation_allowed_only_on_latest_step() {
        let mut t = preact_trajectory();
        t.steps[1].observation = None;
        t.validate().unwrap();
        t.steps[0].observation = None;
        assert!(t.validate().is_err());
    }

    #[test]
    fn react_step_with_predictions_is_invalid() {
        let mut t = preact_trajectory();
        t.framework = Framework::ReAct;
        assert!(t.validate().is_err());
        for s in &mut t.steps {
            s.prediction.clear();
        }
        t.validate().unwrap();
    }

    #[test]
    fn success_requires_full_score() {
        let mut t = preact_trajectory();
        t.outcome = Outcome::Success;
        t.score = 0.5;
        assert!(t.validate().is_err());
        t.score = 1.0;
        t.validate().unwrap();
    }

    #[test]
    fn retention_labels_are_compact() {
        assert_eq!(HistoryPolicy::react().label(), "0");
        assert_eq!(HistoryPolicy::immediate().label(), "1");
        assert_eq!(HistoryPolicy::permanent().label(), "all");
        assert_eq!(HistoryPolicy::reflexion().label(), "all+ref");
        assert_eq!(HistoryPolicy::new(Retention::None, true).label(), "0+ref");
    }
}
