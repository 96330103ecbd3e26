//! History assembly: which past turn components reach the next prompt, and
//! how the structured message list becomes alternating chat turns.
//!
//! The message list mirrors the interaction transcript: the initial
//! observation, then per turn the thought, the action, the prediction block
//! (when retained), and the environment reply. Retention decides how many
//! prediction blocks survive; reflections from earlier trials form a prefix.

use crate::agent::PromptTemplate;
use crate::llm::ChatTurn;
use crate::types::{HistoryPolicy, Retention, Step};

/// Longest environment text kept verbatim; anything longer is tail-truncated.
pub const OBSERVATION_CHAR_LIMIT: usize = 4096;

/// Marker appended in place of a cut tail.
pub const TRUNCATION_MARKER: &str = "\n[output truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageOrigin {
    Environment,
    AgentThoughtAction,
    AgentPrediction,
    Reflection,
}

/// One transcript element. `text` is never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryMessage {
    pub origin: MessageOrigin,
    pub text: String,
}

impl HistoryMessage {
    fn new(origin: MessageOrigin, text: impl Into<String>) -> Self {
        HistoryMessage { origin, text: text.into() }
    }
}

/// Caps `text` at [`OBSERVATION_CHAR_LIMIT`] characters, marker included.
pub fn truncate_observation(text: &str) -> String {
    truncate_to(text, OBSERVATION_CHAR_LIMIT)
}

/// Caps `text` at `limit` characters; the marker counts against the limit.
pub fn truncate_to(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let marker_len = TRUNCATION_MARKER.chars().count();
    let keep = limit.saturating_sub(marker_len);
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

/// Canonical numbered rendering of a prediction block, one item per line.
pub fn prediction_block_text(predictions: &[crate::types::PredictedOutcome]) -> String {
    let mut lines = Vec::with_capacity(predictions.len());
    for (i, p) in predictions.iter().enumerate() {
        let mut line = format!("{}. {}", i + 1, p.category.trim());
        let measure = p.measure.trim();
        if !measure.is_empty() {
            line.push(' ');
            line.push_str(measure);
        }
        lines.push(line);
    }
    lines.join("\n")
}

/// Assembles the transcript for the next prompt.
///
/// Ordering: reflections (when the policy carries them), the initial
/// observation, then per step its thought, action, retained prediction block,
/// and observation. The latest step may still lack an observation; its
/// prediction block is retained or dropped like any other.
pub fn build_history(
    o0: &str,
    steps: &[Step],
    reflections: &[String],
    policy: HistoryPolicy,
) -> Vec<HistoryMessage> {
    let mut messages = Vec::new();
    if policy.include_reflections {
        for r in reflections {
            if !r.is_empty() {
                messages.push(HistoryMessage::new(MessageOrigin::Reflection, r.clone()));
            }
        }
    }
    messages.push(HistoryMessage::new(
        MessageOrigin::Environment,
        truncate_observation(o0),
    ));
    let last = steps.len().saturating_sub(1);
    for (pos, step) in steps.iter().enumerate() {
        if !step.thought.is_empty() {
            messages.push(HistoryMessage::new(
                MessageOrigin::AgentThoughtAction,
                step.thought.clone(),
            ));
        }
        messages.push(HistoryMessage::new(
            MessageOrigin::AgentThoughtAction,
            step.action.clone(),
        ));
        let keep_prediction = match policy.retention {
            Retention::None => false,
            Retention::Last => pos == last,
            Retention::All => true,
        };
        if keep_prediction && !step.prediction.is_empty() {
            messages.push(HistoryMessage::new(
                MessageOrigin::AgentPrediction,
                prediction_block_text(&step.prediction),
            ));
        }
        if let Some(obs) = &step.observation {
            messages.push(HistoryMessage::new(
                MessageOrigin::Environment,
                truncate_observation(obs),
            ));
        }
    }
    messages
}

/// Folds the transcript into alternating chat turns.
///
/// Environment texts become user turns. The thought, action, and prediction
/// of one step merge into a single assistant turn rendered in the template's
/// section order. Reflections are prepended to the first user turn.
pub fn render_messages(messages: &[HistoryMessage], template: &PromptTemplate) -> Vec<ChatTurn> {
    let mut turns: Vec<ChatTurn> = Vec::new();
    let mut reflections: Vec<&str> = Vec::new();
    let mut group: Vec<&str> = Vec::new();
    let mut group_prediction: Option<&str> = None;
    let mut seen_user = false;

    let flush_group = |turns: &mut Vec<ChatTurn>, group: &mut Vec<&str>, prediction: &mut Option<&str>| {
        if group.is_empty() && prediction.is_none() {
            return;
        }
        let (thought, action) = match group.len() {
            0 => ("", ""),
            1 => ("", group[0]),
            _ => (group[0], group[1]),
        };
        let text = template.render_assistant_raw(thought, action, prediction.take());
        turns.push(ChatTurn::assistant(text));
        group.clear();
    };

    for message in messages {
        match message.origin {
            MessageOrigin::Reflection => reflections.push(&message.text),
            MessageOrigin::Environment => {
                flush_group(&mut turns, &mut group, &mut group_prediction);
                let text = if !seen_user && !reflections.is_empty() {
                    format!("{}\n\n{}", reflections.join("\n"), message.text)
                } else {
                    message.text.clone()
                };
                seen_user = true;
                turns.push(ChatTurn::user(text));
            }
            MessageOrigin::AgentThoughtAction => group.push(&message.text),
            MessageOrigin::AgentPrediction => group_prediction = Some(&message.text),
        }
    }
    flush_group(&mut turns, &mut group, &mut group_prediction);
    turns
}
