//! Deterministic desk-scale environments. Four families have local
//! simulators; question answering ships templates only. Every instance is a
//! data file with an oracle action sequence that must solve it.

mod filesystem;
mod household;
mod puzzle;
mod tablequery;

pub use filesystem::{FileEntry, ShellParams};
pub use household::{HouseholdParams, Receptacle};
pub use puzzle::{KeyFact, Mislead, PuzzleParams};
pub use tablequery::TableParams;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::PromptTemplate;
use crate::types::EnvFamily;

/// Environment reply to one action.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvOutcome {
    pub observation: String,
    pub done: bool,
    /// Final score in [0, 1]; meaningful when `done`, else best-so-far.
    pub score: f64,
}

/// A live episode of one task. Implementations are deterministic: the same
/// action sequence always produces the same observations.
pub trait TaskEnv {
    fn task_id(&self) -> &str;
    fn family(&self) -> EnvFamily;
    fn max_turns(&self) -> usize;
    fn initial_observation(&self) -> String;
    fn step(&mut self, action: &str) -> EnvOutcome;
    /// Score credited when the episode ends without `done`.
    fn partial_score(&self) -> f64;
    /// Extra per-round line for the prompt; present only for families whose
    /// instructions promise a current-round action list.
    fn available_actions(&self) -> Option<String>;
}

/// Family-specific instance parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyParams {
    Hh(HouseholdParams),
    Os(ShellParams),
    Db(TableParams),
    Ltp(PuzzleParams),
}

/// One task instance as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub family: EnvFamily,
    pub goal: String,
    #[serde(default)]
    pub description: String,
    /// Turn cap; defaults to the family cap when absent.
    #[serde(default)]
    pub max_turns: Option<usize>,
    /// Action sequence that must solve the instance.
    pub oracle: Vec<String>,
    /// Worked example some templates embed via their `(example)` slot.
    #[serde(default)]
    pub example: String,
    pub params: FamilyParams,
}

/// Turn caps per family when the instance does not override them.
pub fn default_max_turns(family: EnvFamily) -> usize {
    match family {
        EnvFamily::Hh => 35,
        EnvFamily::Os => 8,
        EnvFamily::Db => 5,
        EnvFamily::Ltp => 50,
        EnvFamily::Qa => 8,
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("family {0} has no local simulator")]
    NoSimulator(EnvFamily),
    #[error("bad task spec {id}: {message}")]
    BadSpec { id: String, message: String },
    #[error("no built-in instance named {0}")]
    UnknownInstance(String),
    #[error("malformed instance file: {0}")]
    MalformedSpec(String),
}

impl TaskSpec {
    pub fn from_json(text: &str) -> Result<TaskSpec, EnvError> {
        let spec: TaskSpec =
            serde_json::from_str(text).map_err(|e| EnvError::MalformedSpec(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn max_turns(&self) -> usize {
        self.max_turns.unwrap_or_else(|| default_max_turns(self.family))
    }

    fn check(&self) -> Result<(), EnvError> {
        let fail = |message: &str| {
            Err(EnvError::BadSpec { id: self.id.clone(), message: message.to_string() })
        };
        if self.id.trim().is_empty() {
            return fail("empty id");
        }
        let params_family = match self.params {
            FamilyParams::Hh(_) => EnvFamily::Hh,
            FamilyParams::Os(_) => EnvFamily::Os,
            FamilyParams::Db(_) => EnvFamily::Db,
            FamilyParams::Ltp(_) => EnvFamily::Ltp,
        };
        if params_family != self.family {
            return fail("params family does not match the declared family");
        }
        if self.oracle.is_empty() {
            return fail("empty oracle action sequence");
        }
        if self.oracle.len() > self.max_turns() {
            return fail("oracle longer than the turn cap");
        }
        Ok(())
    }

    /// Opening observation shown as the first user turn.
    pub fn initial_observation(&self) -> String {
        if self.description.trim().is_empty() {
            format!("Your task is to: {}", self.goal)
        } else {
            format!("{}\n\nYour task is to: {}", self.description.trim(), self.goal)
        }
    }
}

/// Starts a fresh episode of `spec`.
pub fn reset(spec: &TaskSpec) -> Result<Box<dyn TaskEnv>, EnvError> {
    spec.check()?;
    Ok(match &spec.params {
        FamilyParams::Hh(params) => Box::new(household::HouseholdEnv::new(spec, params.clone())),
        FamilyParams::Os(params) => Box::new(filesystem::ShellEnv::new(spec, params.clone())),
        FamilyParams::Db(params) => Box::new(tablequery::TableEnv::new(spec, params.clone())),
        FamilyParams::Ltp(params) => Box::new(puzzle::PuzzleEnv::new(spec, params.clone())),
    })
}

macro_rules! builtin {
    ($($path:literal),+ $(,)?) => {
        &[$(include_str!(concat!("../../instances/", $path))),+]
    };
}

const BUILTIN_FILES: &[&str] = builtin![
    "hh_trap_lettuce.json",
    "hh_trap_mug.json",
    "hh_plain_apple.json",
    "hh_plain_book.json",
    "hh_plain_plate.json",
    "os_trap_hidden.json",
    "os_trap_case.json",
    "os_plain_count.json",
    "os_plain_read.json",
    "os_plain_find.json",
    "db_trap_colname.json",
    "db_trap_employee.json",
    "db_plain_orders.json",
    "db_plain_books.json",
    "db_plain_update.json",
    "ltp_trap_elevator.json",
    "ltp_trap_parrot.json",
    "ltp_plain_coffee.json",
    "ltp_plain_lighthouse.json",
    "ltp_plain_baker.json",
];

/// All instances shipped with the crate.
pub fn builtin_specs() -> Vec<TaskSpec> {
    BUILTIN_FILES
        .iter()
        .map(|text| TaskSpec::from_json(text).expect("built-in instance files are valid"))
        .collect()
}

/// Looks up one shipped instance by id, e.g. `db/trap-colname`.
pub fn builtin_spec(id: &str) -> Result<TaskSpec, EnvError> {
    builtin_specs()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| EnvError::UnknownInstance(id.to_string()))
}

/// Fills the template's instance slots: the puzzle story, the worked
/// example, and the task statement.
pub fn instantiate_template(template: &PromptTemplate, spec: &TaskSpec) -> PromptTemplate {
    let values: Vec<(&str, &str)> = match (&spec.params, spec.family) {
        (FamilyParams::Ltp(p), _) => vec![("(story)", p.story.as_str())],
        (_, EnvFamily::Os) => vec![
            ("(example)", spec.example.as_str()),
            ("(problem)", spec.goal.as_str()),
        ],
        (_, EnvFamily::Qa) => vec![
            ("(three examples)", spec.example.as_str()),
            ("(problem)", spec.goal.as_str()),
        ],
        _ => vec![],
    };
    template.with_placeholders(&values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_spec_loads_and_declares_a_simulated_family() {
        let specs = builtin_specs();
        assert_eq!(specs.len(), 20);
        for family in [EnvFamily::Hh, EnvFamily::Os, EnvFamily::Db, EnvFamily::Ltp] {
            let n = specs.iter().filter(|s| s.family == family).count();
            assert!(n >= 5, "family {family} has only {n} instances");
        }
        let mut ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), specs.len(), "instance ids must be unique");
    }

    #[test]
    fn oracle_replay_solves_every_builtin_instance() {
        for spec in builtin_specs() {
            let mut env = reset(&spec).unwrap();
            let mut last = None;
            for action in &spec.oracle {
                let out = env.step(action);
                assert!(
                    last.is_none(),
                    "{}: oracle continued after the episode ended",
                    spec.id
                );
                if out.done {
                    last = Some(out);
                }
            }
            let finished = last.unwrap_or_else(|| panic!("{}: oracle did not finish", spec.id));
            assert_eq!(finished.score, 1.0, "{}: oracle must score 1.0", spec.id);
        }
    }

    #[test]
    fn unknown_instance_and_missing_simulator_are_typed_errors() {
        assert!(matches!(builtin_spec("nope/nothing"), Err(EnvError::UnknownInstance(_))));
        let mut spec = builtin_spec("hh/trap-lettuce").unwrap();
        spec.oracle.clear();
        assert!(matches!(reset(&spec), Err(EnvError::BadSpec { .. })));
    }

    #[test]
    fn family_turn_caps_apply_when_unset() {
        let spec = builtin_spec("db/trap-colname").unwrap();
        assert_eq!(spec.max_turns(), default_max_turns(EnvFamily::Db));
    }

    #[test]
    fn instantiation_fills_the_instance_slots_and_keeps_literal_prose() {
        use crate::agent::template;
        use crate::types::Framework;

        let spec = builtin_spec("os/plain-count").unwrap();
        let base = template(EnvFamily::Os, Framework::PreAct).unwrap();
        let filled = instantiate_template(&base, &spec);
        assert!(filled.system_text.contains(&spec.example));
        assert!(filled.system_text.contains(&spec.goal));
        assert!(!filled.system_text.contains("(example)"));
        assert!(!filled.system_text.contains("(problem)"));
        assert!(filled.system_text.contains("(ubuntu)"));

        let spec = builtin_spec("ltp/trap-elevator").unwrap();
        let base = template(EnvFamily::Ltp, Framework::PreAct).unwrap();
        let filled = instantiate_template(&base, &spec);
        let FamilyParams::Ltp(params) = &spec.params else {
            panic!("ltp instance must carry puzzle params");
        };
        assert!(filled.system_text.contains(&params.story));
        assert!(!filled.system_text.contains("(story)"));
    }
}
