//! Lateral thinking puzzle simulator. Questions are matched against key-fact
//! signal phrases; replies are Yes, No, Irrelevant, or Redundant. The score is
//! the fraction of key facts uncovered.

use serde::{Deserialize, Serialize};

use super::{EnvOutcome, TaskEnv, TaskSpec};
use crate::types::EnvFamily;

/// One piece of the hidden truth. A question uncovers it when any signal
/// phrase occurs in the question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyFact {
    pub text: String,
    pub signals: Vec<String>,
}

/// A misleading direction: questions touching it are answered "No."
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mislead {
    pub signals: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PuzzleParams {
    pub story: String,
    /// Full truth, shown to judges, never to the playing agent.
    pub solution: String,
    pub facts: Vec<KeyFact>,
    #[serde(default)]
    pub misleads: Vec<Mislead>,
}

pub struct PuzzleEnv {
    id: String,
    max_turns: usize,
    o0: String,
    facts: Vec<KeyFact>,
    misleads: Vec<Mislead>,
    guessed: Vec<bool>,
}

/// Lowercased, punctuation stripped, single-spaced, padded for whole-word
/// substring checks.
fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push(' ');
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(c.to_lowercase());
        } else {
            pending_space = !out.ends_with(' ');
        }
    }
    out.push(' ');
    out
}

fn touches(question_norm: &str, signals: &[String]) -> bool {
    signals.iter().any(|s| {
        let sig = normalize(s);
        sig.trim() != "" && question_norm.contains(&sig)
    })
}

impl PuzzleEnv {
    pub fn new(spec: &TaskSpec, params: PuzzleParams) -> Self {
        let n = params.facts.len();
        PuzzleEnv {
            id: spec.id.clone(),
            max_turns: spec.max_turns(),
            o0: spec.initial_observation(),
            facts: params.facts,
            misleads: params.misleads,
            guessed: vec![false; n],
        }
    }

    fn all_guessed(&self) -> bool {
        self.guessed.iter().all(|g| *g)
    }
}

impl TaskEnv for PuzzleEnv {
    fn task_id(&self) -> &str {
        &self.id
    }

    fn family(&self) -> EnvFamily {
        EnvFamily::Ltp
    }

    fn max_turns(&self) -> usize {
        self.max_turns
    }

    fn initial_observation(&self) -> String {
        self.o0.clone()
    }

    fn step(&mut self, action: &str) -> EnvOutcome {
        if self.all_guessed() {
            return EnvOutcome {
                observation: "The puzzle is already solved.".into(),
                done: true,
                score: 1.0,
            };
        }
        let question = normalize(action);
        let mut hit: Option<usize> = None;
        let mut redundant = false;
        for (i, fact) in self.facts.iter().enumerate() {
            if touches(&question, &fact.signals) {
                if self.guessed[i] {
                    redundant = true;
                } else {
                    hit = Some(i);
                    break;
                }
            }
        }
        let observation = if let Some(i) = hit {
            self.guessed[i] = true;
            if self.all_guessed() {
                format!("Yes. You have uncovered all {} key points.", self.facts.len())
            } else {
                "Yes.".to_string()
            }
        } else if redundant {
            "Redundant.".to_string()
        } else if self.misleads.iter().any(|m| touches(&question, &m.signals)) {
            "No.".to_string()
        } else {
            "Irrelevant.".to_string()
        };
        EnvOutcome {
            observation,
            done: self.all_guessed(),
            score: self.partial_score(),
        }
    }

    fn partial_score(&self) -> f64 {
        if self.facts.is_empty() {
            return 0.0;
        }
        self.guessed.iter().filter(|g| **g).count() as f64 / self.facts.len() as f64
    }

    fn available_actions(&self) -> Option<String> {
        None
    }
}
