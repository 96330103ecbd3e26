//! Prompt template catalog. The system texts ship as data files and are kept
//! byte-stable; a fidelity test pins their hashes. Each template also carries
//! the grammar descriptor used to render and parse assistant turns.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::history::prediction_block_text;
use crate::types::{EnvFamily, Framework, PredictedOutcome};

const HH_PREACT: &str = include_str!("../../templates/hh_preact.txt");
const HH_REACT: &str = include_str!("../../templates/hh_react.txt");
const OS_PREACT: &str = include_str!("../../templates/os_preact.txt");
const OS_REACT: &str = include_str!("../../templates/os_react.txt");
const DB_PREACT: &str = include_str!("../../templates/db_preact.txt");
const DB_REACT: &str = include_str!("../../templates/db_react.txt");
const LTP_PREACT: &str = include_str!("../../templates/ltp_preact.txt");
const LTP_REACT: &str = include_str!("../../templates/ltp_react.txt");
const QA_PREACT: &str = include_str!("../../templates/qa_preact.txt");
const REFLEXION: &str = include_str!("../../templates/reflexion.txt");
const JUDGE_DIVERSITY: &str = include_str!("../../templates/judge_diversity.txt");
const JUDGE_STRATEGY: &str = include_str!("../../templates/judge_strategy.txt");

/// How an assistant turn is laid out for one family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionStyle {
    /// Plain labeled lines (household, question answering).
    Labeled,
    /// `Act: bash|finish|answer(...)` with a fenced bash block.
    OsCommand,
    /// `Action: Operation` with a fenced one-line SQL statement, or
    /// `Action: Answer` with a `Final Answer:` line.
    SqlOperation,
    /// A question line; the ReAct variant is free-form.
    Question,
    /// One line per section; predictions collapse onto a single line.
    InlineQa,
}

/// Section labels and layout for assistant turns of one (family, framework).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssistantFormat {
    pub thought_label: Option<&'static str>,
    pub action_label: Option<&'static str>,
    pub prediction_label: Option<&'static str>,
    pub style: ActionStyle,
}

/// A loaded template: fixed system text plus the turn grammar.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub family: EnvFamily,
    pub framework: Framework,
    pub system_text: String,
    pub format: AssistantFormat,
    /// Sentence appended to the next user turn after a prediction mismatch.
    pub disparity_hint: &'static str,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("no template shipped for family {family} with framework {framework}")]
    Unavailable { family: EnvFamily, framework: Framework },
}

const HH_HINT: &str = "The latest feedback does not fall into any of the previously predicted scenarios. In this round's \"THOUGHT:\" section, consider the reasons for this disparity and re-plan accordingly.";
const OS_HINT: &str = "The real output mismatches your last prediction. Reflect on your thought and action, then make a new plan.";
const DB_HINT: &str = "The SQL output mismatches the predicted output. Check the plan and SQL from the last round, find the mistake, and refine it.";
const LTP_HINT: &str = "The answer does not match any of your predicted feedback. Reconsider your question direction before asking the next question.";
const QA_HINT: &str = "The observation does not fall into any predicted feedback. Reconsider your approach in the next thought.";

fn format_for(family: EnvFamily, predictive: bool) -> AssistantFormat {
    match family {
        EnvFamily::Hh => AssistantFormat {
            thought_label: Some("THOUGHT:"),
            action_label: Some("ACTION:"),
            prediction_label: predictive.then_some("PREDICTED FEEDBACK:"),
            style: ActionStyle::Labeled,
        },
        EnvFamily::Os => AssistantFormat {
            thought_label: Some("Think:"),
            action_label: Some("Act:"),
            prediction_label: predictive.then_some("Predict OS output:"),
            style: ActionStyle::OsCommand,
        },
        EnvFamily::Db => AssistantFormat {
            thought_label: Some("Thought:"),
            action_label: Some("Action:"),
            prediction_label: predictive.then_some("Predict MySql Output:"),
            style: ActionStyle::SqlOperation,
        },
        EnvFamily::Ltp => AssistantFormat {
            thought_label: None,
            action_label: predictive.then_some("Question:"),
            prediction_label: predictive.then_some("Predicted Feedback:"),
            style: ActionStyle::Question,
        },
        EnvFamily::Qa => AssistantFormat {
            thought_label: Some("Thought:"),
            action_label: Some("Action:"),
            prediction_label: predictive.then_some("Predicted Feedback:"),
            style: ActionStyle::InlineQa,
        },
    }
}

fn hint_for(family: EnvFamily) -> &'static str {
    match family {
        EnvFamily::Hh => HH_HINT,
        EnvFamily::Os => OS_HINT,
        EnvFamily::Db => DB_HINT,
        EnvFamily::Ltp => LTP_HINT,
        EnvFamily::Qa => QA_HINT,
    }
}

/// Fetches the shipped template for a (family, framework) pair. ActOnly runs
/// share the ReAct system text. There is no non-predictive QA template.
pub fn template(family: EnvFamily, framework: Framework) -> Result<PromptTemplate, TemplateError> {
    let predictive = framework.is_predictive();
    let text = match (family, predictive) {
        (EnvFamily::Hh, true) => HH_PREACT,
        (EnvFamily::Hh, false) => HH_REACT,
        (EnvFamily::Os, true) => OS_PREACT,
        (EnvFamily::Os, false) => OS_REACT,
        (EnvFamily::Db, true) => DB_PREACT,
        (EnvFamily::Db, false) => DB_REACT,
        (EnvFamily::Ltp, true) => LTP_PREACT,
        (EnvFamily::Ltp, false) => LTP_REACT,
        (EnvFamily::Qa, true) => QA_PREACT,
        (EnvFamily::Qa, false) => {
            return Err(TemplateError::Unavailable { family, framework })
        }
    };
    Ok(PromptTemplate {
        family,
        framework,
        system_text: text.trim_end().to_string(),
        format: format_for(family, predictive),
        disparity_hint: hint_for(family),
    })
}

/// Self-reflection prompt with `{examples}`, `{question}`, `{scratchpad}` slots.
pub fn reflexion_text() -> &'static str {
    REFLEXION.trim_end()
}

/// Pairwise diversity judging prompt.
pub fn diversity_judge_text() -> &'static str {
    JUDGE_DIVERSITY.trim_end()
}

/// Per-turn plan-direction judging prompt.
pub fn strategy_judge_text() -> &'static str {
    JUDGE_STRATEGY.trim_end()
}

impl PromptTemplate {
    /// Returns a copy with every occurrence of each literal placeholder
    /// replaced, e.g. `("(story)", story_text)`.
    pub fn with_placeholders(&self, values: &[(&str, &str)]) -> PromptTemplate {
        let mut out = self.clone();
        out.system_text = substitute(&self.system_text, values);
        out
    }

    /// Renders one assistant turn from an already-formatted prediction block.
    pub fn render_assistant_raw(
        &self,
        thought: &str,
        action: &str,
        prediction_block: Option<&str>,
    ) -> String {
        let mut out = String::new();
        match self.format.style {
            ActionStyle::Labeled => {
                if !thought.is_empty() {
                    out.push_str(&format!("THOUGHT: {thought}\n"));
                }
                out.push_str(&format!("ACTION: {action}"));
                if let Some(block) = prediction_block {
                    out.push_str(&format!("\nPREDICTED FEEDBACK:\n{block}"));
                }
            }
            ActionStyle::OsCommand => {
                if !thought.is_empty() {
                    out.push_str(&format!("Think: {thought}\n\n"));
                }
                if action == "finish" || action.starts_with("answer(") {
                    out.push_str(&format!("Act: {action}"));
                } else {
                    out.push_str(&format!("Act: bash\n\n```bash\n{action}\n```"));
                }
                if let Some(block) = prediction_block {
                    out.push_str(&format!("\n\nPredict OS output:\n{block}"));
                }
            }
            ActionStyle::SqlOperation => {
                if !thought.is_empty() {
                    out.push_str(&format!("Thought: {thought}\n"));
                }
                if let Some(payload) = answer_payload(action) {
                    out.push_str(&format!("Action: Answer\nFinal Answer: {payload}"));
                    if let Some(block) = prediction_block {
                        out.push_str(&format!("\nPredict MySql Output:\n{block}"));
                    }
                } else {
                    out.push_str(&format!("Action: Operation\n```sql\n{action}\n```"));
                    if let Some(block) = prediction_block {
                        out.push_str(&format!("\nPredict MySql Output:\n{block}"));
                    }
                }
            }
            ActionStyle::Question => {
                if self.format.action_label.is_some() {
                    out.push_str(&format!("Question: {action}"));
                } else {
                    out.push_str(action);
                }
                if let Some(block) = prediction_block {
                    out.push_str(&format!("\nPredicted Feedback:\n{block}"));
                }
            }
            ActionStyle::InlineQa => {
                if !thought.is_empty() {
                    out.push_str(&format!("Thought: {thought}\n"));
                }
                out.push_str(&format!("Action: {action}"));
                if let Some(block) = prediction_block {
                    let inline = block.replace('\n', " ");
                    out.push_str(&format!("\nPredicted Feedback: {inline}"));
                }
            }
        }
        out
    }

    /// Renders one assistant turn from structured parts.
    pub fn render_assistant(
        &self,
        thought: &str,
        action: &str,
        predictions: &[PredictedOutcome],
    ) -> String {
        let block;
        let block_ref = if predictions.is_empty() || self.format.prediction_label.is_none() {
            None
        } else {
            block = prediction_block_text(predictions);
            Some(block.as_str())
        };
        self.render_assistant_raw(thought, action, block_ref)
    }
}

/// `Answer: [...]` payload of a stored DB action, if it is an answer action.
pub fn answer_payload(action: &str) -> Option<&str> {
    let rest = action.strip_prefix("Answer:").or_else(|| action.strip_prefix("answer:"))?;
    Some(rest.trim())
}

fn substitute(text: &str, values: &[(&str, &str)]) -> String {
    let mut out = text.to_string();
    for (placeholder, value) in values {
        out = out.replace(placeholder, value);
    }
    out
}

/// Hex SHA-256 of a template text as loaded (trailing whitespace trimmed).
pub fn template_hash(text: &str) -> String {
    let digest = Sha256::digest(text.trim_end().as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Every shipped template text under its catalog name.
pub fn catalog_entries() -> Vec<(&'static str, &'static str)> {
    vec![
        ("hh_preact", HH_PREACT),
        ("hh_react", HH_REACT),
        ("os_preact", OS_PREACT),
        ("os_react", OS_REACT),
        ("db_preact", DB_PREACT),
        ("db_react", DB_REACT),
        ("ltp_preact", LTP_PREACT),
        ("ltp_react", LTP_REACT),
        ("qa_preact", QA_PREACT),
        ("reflexion", REFLEXION),
        ("judge_diversity", JUDGE_DIVERSITY),
        ("judge_strategy", JUDGE_STRATEGY),
    ]
}
