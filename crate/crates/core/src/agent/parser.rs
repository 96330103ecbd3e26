//! Assistant-turn parsing: section labels to structured thought, action, and
//! prediction list. Total over arbitrary input; failures are typed, never
//! panics.

use thiserror::Error;

use super::templates::{ActionStyle, AssistantFormat, PromptTemplate};
use crate::types::PredictedOutcome;

/// Structured reading of one assistant response.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTurn {
    pub thought: String,
    pub action: String,
    pub predictions: Vec<PredictedOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response is empty")]
    EmptyResponse,
    #[error("no action section found")]
    MissingAction,
    #[error("predictive template but no prediction section found")]
    MissingPrediction,
}

/// Matches `label` at the start of `line` (leading whitespace skipped, case
/// ignored, whitespace runs inside the label and before the colon tolerated).
/// Returns the byte offset where the content after the label begins.
fn label_content_start(line: &str, label: &str) -> Option<usize> {
    let lead = line.len() - line.trim_start().len();
    let rest = &line[lead..];
    let mut chars = rest.char_indices().peekable();
    for lc in label.chars() {
        if lc == ':' {
            while let Some(&(_, c)) = chars.peek() {
                if c == ' ' || c == '\t' {
                    chars.next();
                } else {
                    break;
                }
            }
            match chars.next() {
                Some((_, ':')) => {}
                _ => return None,
            }
        } else if lc.is_whitespace() {
            let mut any = false;
            while let Some(&(_, c)) = chars.peek() {
                if c == ' ' || c == '\t' {
                    any = true;
                    chars.next();
                } else {
                    break;
                }
            }
            if !any {
                return None;
            }
        } else {
            match chars.next() {
                Some((_, c)) if c.to_lowercase().eq(lc.to_lowercase()) => {}
                _ => return None,
            }
        }
    }
    let content = chars.peek().map_or(rest.len(), |&(i, _)| i);
    Some(lead + content)
}

#[derive(Debug, Default)]
struct Sections {
    thought: Option<String>,
    action: Option<String>,
    prediction: Option<String>,
    final_answer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SectionKind {
    Thought,
    Action,
    Prediction,
    FinalAnswer,
}

/// Splits a response into labeled sections. A label line opens its section;
/// following lines belong to it until the next label.
fn split_sections(text: &str, format: &AssistantFormat) -> Sections {
    let mut labels: Vec<(SectionKind, &str)> = Vec::new();
    if let Some(l) = format.thought_label {
        labels.push((SectionKind::Thought, l));
    }
    if let Some(l) = format.action_label {
        labels.push((SectionKind::Action, l));
    }
    if let Some(l) = format.prediction_label {
        labels.push((SectionKind::Prediction, l));
    }
    if format.style == ActionStyle::SqlOperation {
        labels.push((SectionKind::FinalAnswer, "Final Answer:"));
    }

    let mut sections = Sections::default();
    let mut current: Option<SectionKind> = None;
    for line in text.lines() {
        let mut opened = None;
        for (kind, label) in &labels {
            if let Some(at) = label_content_start(line, label) {
                opened = Some((*kind, &line[at..]));
                break;
            }
        }
        let (kind, content) = match opened {
            Some((kind, content)) => {
                current = Some(kind);
                (kind, content)
            }
            None => match current {
                Some(kind) => (kind, line),
                None => continue,
            },
        };
        let slot = match kind {
            SectionKind::Thought => &mut sections.thought,
            SectionKind::Action => &mut sections.action,
            SectionKind::Prediction => &mut sections.prediction,
            SectionKind::FinalAnswer => &mut sections.final_answer,
        };
        match slot {
            Some(existing) => {
                existing.push('\n');
                existing.push_str(content);
            }
            None => *slot = Some(content.to_string()),
        }
    }
    sections
}

/// First fenced code block within `text`, language tag skipped.
fn fenced_block(text: &str) -> Option<String> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let nl = after.find('\n')?;
    let body = &after[nl + 1..];
    let end = body.find("```")?;
    let inner = body[..end].trim();
    if inner.is_empty() {
        None
    } else {
        Some(inner.to_string())
    }
}

/// Leading `N.` marker: returns the content after the marker.
fn numbered_item_start(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &trimmed[digits..];
    let rest = rest.strip_prefix('.')?;
    Some(rest.trim_start())
}

fn parse_numbered_lines(section: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    for line in section.lines() {
        if let Some(content) = numbered_item_start(line) {
            items.push(content.to_string());
        } else if let Some(last) = items.last_mut() {
            let extra = line.trim();
            if !extra.is_empty() {
                last.push(' ');
                last.push_str(extra);
            }
        }
    }
    items
}

/// Splits `1. foo 2. bar` markers embedded in a single line.
fn parse_numbered_inline(text: &str) -> Vec<String> {
    let mut marker_starts: Vec<(usize, usize)> = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut k = 0;
    while k < chars.len() {
        let at_boundary = k == 0 || chars[k - 1].1.is_whitespace();
        if at_boundary && chars[k].1.is_ascii_digit() {
            let mut j = k;
            while j < chars.len() && chars[j].1.is_ascii_digit() {
                j += 1;
            }
            if j < chars.len() && chars[j].1 == '.' {
                let content = if j + 1 < chars.len() { chars[j + 1].0 } else { text.len() };
                marker_starts.push((chars[k].0, content));
                k = j + 1;
                continue;
            }
        }
        k += 1;
    }
    let mut items = Vec::new();
    for (i, &(_, content)) in marker_starts.iter().enumerate() {
        let end = marker_starts.get(i + 1).map_or(text.len(), |&(s, _)| s);
        items.push(text[content..end].trim().to_string());
    }
    items
}

/// Splits one prediction item into category and measure at the first sentence
/// boundary; without one, the whole item is the category.
fn split_category_measure(item: &str) -> PredictedOutcome {
    let chars: Vec<(usize, char)> = item.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') {
            let mut j = k + 1;
            let mut saw_ws = false;
            while j < chars.len() && chars[j].1.is_whitespace() {
                saw_ws = true;
                j += 1;
            }
            if saw_ws && j < chars.len() {
                let split = i + c.len_utf8();
                return PredictedOutcome::new(item[..split].trim(), item[split..].trim());
            }
        }
    }
    PredictedOutcome::new(item.trim(), "")
}

fn parse_predictions(section: &str, inline: bool) -> Vec<PredictedOutcome> {
    let items = if inline && !section.trim().contains('\n') {
        let found = parse_numbered_inline(section);
        if found.is_empty() && !section.trim().is_empty() {
            vec![section.trim().to_string()]
        } else {
            found
        }
    } else {
        parse_numbered_lines(section)
    };
    let mut out = Vec::new();
    for item in items {
        let parsed = split_category_measure(&item);
        if !parsed.category.trim().is_empty() {
            out.push(parsed);
        }
    }
    if out.is_empty() && !section.trim().is_empty() && !inline {
        let whole = split_category_measure(section.trim());
        if !whole.category.trim().is_empty() {
            out.push(whole);
        }
    }
    out
}

fn starts_with_ci(text: &str, prefix: &str) -> bool {
    text.len() >= prefix.len()
        && text
            .chars()
            .zip(prefix.chars())
            .take(prefix.chars().count())
            .all(|(a, b)| a.to_lowercase().eq(b.to_lowercase()))
}

fn extract_action(sections: &Sections, format: &AssistantFormat) -> Result<String, ParseError> {
    let section = sections.action.as_deref().map(str::trim);
    match format.style {
        ActionStyle::Labeled | ActionStyle::InlineQa | ActionStyle::Question => {
            let content = section.ok_or(ParseError::MissingAction)?;
            if content.is_empty() {
                Err(ParseError::MissingAction)
            } else {
                Ok(content.to_string())
            }
        }
        ActionStyle::OsCommand => {
            let content = sections.action.as_deref().ok_or(ParseError::MissingAction)?;
            let head = content.trim();
            if starts_with_ci(head, "bash") {
                fenced_block(content).ok_or(ParseError::MissingAction)
            } else if starts_with_ci(head, "finish") {
                Ok("finish".to_string())
            } else if starts_with_ci(head, "answer") {
                Ok(head.to_string())
            } else if head.is_empty() {
                Err(ParseError::MissingAction)
            } else {
                Ok(head.to_string())
            }
        }
        ActionStyle::SqlOperation => {
            let content = sections.action.as_deref().ok_or(ParseError::MissingAction)?;
            let head = content.trim();
            if starts_with_ci(head, "operation") {
                fenced_block(content).ok_or(ParseError::MissingAction)
            } else if starts_with_ci(head, "answer") {
                let payload = sections
                    .final_answer
                    .as_deref()
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .ok_or(ParseError::MissingAction)?;
                Ok(format!("Answer: {payload}"))
            } else if head.is_empty() {
                Err(ParseError::MissingAction)
            } else {
                Ok(head.to_string())
            }
        }
    }
}

/// Parses one assistant response against the template's turn grammar.
pub fn parse_turn(response: &str, template: &PromptTemplate) -> Result<ParsedTurn, ParseError> {
    let text = response.trim();
    if text.is_empty() {
        return Err(ParseError::EmptyResponse);
    }
    let format = &template.format;

    // Free-form variant: the whole response is the action.
    if format.action_label.is_none() {
        return Ok(ParsedTurn {
            thought: String::new(),
            action: text.to_string(),
            predictions: Vec::new(),
        });
    }

    let sections = split_sections(text, format);
    let action = extract_action(&sections, format)?;
    let thought = sections.thought.as_deref().map(|t| t.trim().to_string()).unwrap_or_default();

    let predictions = if format.prediction_label.is_some() {
        let section = sections.prediction.as_deref().ok_or(ParseError::MissingPrediction)?;
        let parsed = parse_predictions(section, format.style == ActionStyle::InlineQa);
        if parsed.is_empty() {
            return Err(ParseError::MissingPrediction);
        }
        parsed
    } else {
        Vec::new()
    };

    Ok(ParsedTurn { thought, action, predictions })
}
