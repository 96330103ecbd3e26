//! Deterministic rule-based backend for tests and offline runs.

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, LlmError};

/// Predicate over a rendered request.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Substring match anywhere in the rendered request.
    Contains(String),
    /// Substring match against the content of the final user turn.
    LastUserContains(String),
    All(Vec<Matcher>),
    Any(Vec<Matcher>),
    Not(Box<Matcher>),
}

impl Matcher {
    pub fn matches(&self, request: &ChatRequest, rendered: &str) -> bool {
        match self {
            Matcher::Contains(needle) => rendered.contains(needle),
            Matcher::LastUserContains(needle) => {
                request.last_user().is_some_and(|u| u.contains(needle))
            }
            Matcher::All(inner) => inner.iter().all(|m| m.matches(request, rendered)),
            Matcher::Any(inner) => inner.iter().any(|m| m.matches(request, rendered)),
            Matcher::Not(inner) => !inner.matches(request, rendered),
        }
    }
}

/// Response source for a matched rule. `Cycle` varies by sample index within
/// one call, so repeated identical calls stay identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Responder {
    Text(String),
    Cycle(Vec<String>),
}

impl Responder {
    fn sample(&self, index: usize) -> String {
        match self {
            Responder::Text(text) => text.clone(),
            Responder::Cycle(texts) => texts[index % texts.len()].clone(),
        }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            Responder::Text(_) => Ok(()),
            Responder::Cycle(texts) if texts.is_empty() => Err("empty cycle responder".into()),
            Responder::Cycle(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedRule {
    pub matcher: Matcher,
    pub respond: Responder,
}

/// Ordered first-hit rules with a default. A fixed (request, seed) pair always
/// yields the same texts, and the policy holds no mutable state, so concurrent
/// callers cannot observe each other.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub rules: Vec<ScriptedRule>,
    pub default: Responder,
}

impl ScriptedPolicy {
    pub fn with_default(default_text: impl Into<String>) -> Self {
        ScriptedPolicy { rules: Vec::new(), default: Responder::Text(default_text.into()) }
    }

    pub fn rule(mut self, matcher: Matcher, text: impl Into<String>) -> Self {
        self.rules.push(ScriptedRule { matcher, respond: Responder::Text(text.into()) });
        self
    }

    pub fn rule_cycle(mut self, matcher: Matcher, texts: Vec<String>) -> Self {
        assert!(!texts.is_empty(), "cycle responder needs at least one text");
        self.rules.push(ScriptedRule { matcher, respond: Responder::Cycle(texts) });
        self
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let policy: ScriptedPolicy =
            serde_json::from_str(text).map_err(|e| format!("bad scripted policy: {e}"))?;
        policy.check()?;
        Ok(policy)
    }

    fn check(&self) -> Result<(), String> {
        self.default.check()?;
        for rule in &self.rules {
            rule.respond.check()?;
        }
        Ok(())
    }

    fn responder_for(&self, request: &ChatRequest) -> &Responder {
        let rendered = request.rendered();
        self.rules
            .iter()
            .find(|rule| rule.matcher.matches(request, &rendered))
            .map(|rule| &rule.respond)
            .unwrap_or(&self.default)
    }
}

impl ChatBackend for ScriptedPolicy {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        let responder = self.responder_for(request);
        Ok((0..request.n_samples).map(|i| responder.sample(i)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatTurn;

    fn request(last_user: &str) -> ChatRequest {
        ChatRequest::new(
            "system text",
            vec![
                ChatTurn::user("the fridge is closed"),
                ChatTurn::assistant("ACTION: open fridge 1"),
                ChatTurn::user(last_user),
            ],
        )
    }

    #[test]
    fn first_hit_wins_and_repeats_are_identical() {
        let policy = ScriptedPolicy::with_default("fallback")
            .rule(Matcher::Contains("fridge".into()), "canned block")
            .rule(Matcher::Contains("closed".into()), "never reached");
        let req = request("you see a bowl 1");
        let first = policy.complete(&req).unwrap();
        let second = policy.complete(&req).unwrap();
        assert_eq!(first, vec!["canned block".to_string()]);
        assert_eq!(first, second);
    }

    #[test]
    fn unmatched_requests_fall_through_to_default() {
        let policy = ScriptedPolicy::with_default("fallback")
            .rule(Matcher::Contains("no such text".into()), "x");
        assert_eq!(policy.complete(&request("obs")).unwrap(), vec!["fallback".to_string()]);
    }

    #[test]
    fn last_user_matcher_ignores_earlier_turns() {
        let policy = ScriptedPolicy::with_default("fallback")
            .rule(Matcher::LastUserContains("fridge is closed".into()), "x");
        assert_eq!(policy.complete(&request("obs")).unwrap(), vec!["fallback".to_string()]);
        assert_eq!(
            policy.complete(&request("the fridge is closed now")).unwrap(),
            vec!["x".to_string()]
        );
    }

    #[test]
    fn cycle_varies_by_sample_index_within_one_call() {
        let policy = ScriptedPolicy {
            rules: vec![],
            default: Responder::Cycle(vec!["a".into(), "b".into(), "c".into()]),
        };
        let mut req = request("obs");
        req.n_samples = 3;
        assert_eq!(policy.complete(&req).unwrap(), vec!["a", "b", "c"]);
        assert_eq!(policy.complete(&req).unwrap(), vec!["a", "b", "c"]);
        req.n_samples = 5;
        assert_eq!(policy.complete(&req).unwrap(), vec!["a", "b", "c", "a", "b"]);
    }

    #[test]
    fn policy_files_round_trip() {
        let policy = ScriptedPolicy::with_default("d").rule_cycle(
            Matcher::All(vec![
                Matcher::Contains("x".into()),
                Matcher::Not(Box::new(Matcher::LastUserContains("y".into()))),
            ]),
            vec!["one".into(), "two".into()],
        );
        let json = serde_json::to_string(&policy).unwrap();
        let back = ScriptedPolicy::from_json(&json).unwrap();
        assert_eq!(back.rules.len(), 1);
    }

    #[test]
    fn empty_cycle_is_rejected_at_load() {
        let json = r#"{"rules":[],"default":{"cycle":[]}}"#;
        assert!(ScriptedPolicy::from_json(json).is_err());
    }
}
