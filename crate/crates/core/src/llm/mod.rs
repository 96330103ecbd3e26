//! Chat backend abstraction: request shape, typed failures, call budgeting,
//! and the two implementations (scripted rules, OpenAI-compatible HTTP).

mod live;
mod scripted;

pub use live::LiveBackend;
pub use scripted::{Matcher, Responder, ScriptedPolicy, ScriptedRule};

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn user(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::Assistant, content: content.into() }
    }
}

/// One completion request. `seed` is honored by the scripted backend only;
/// live providers receive temperature and sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: String,
    pub turns: Vec<ChatTurn>,
    pub temperature: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, turns: Vec<ChatTurn>) -> Self {
        ChatRequest {
            system: system.into(),
            turns,
            temperature: 0.0,
            n_samples: 1,
            seed: 0,
        }
    }

    /// Flat text view of the request, used by scripted matchers.
    pub fn rendered(&self) -> String {
        let mut out = format!("[system] {}", self.system);
        for turn in &self.turns {
            out.push('\n');
            out.push_str(match turn.role {
                Role::User => "[user] ",
                Role::Assistant => "[assistant] ",
            });
            out.push_str(&turn.content);
        }
        out
    }

    pub fn last_user(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
    }

    /// Appends a sentence to the final user turn, e.g. a disparity hint or a
    /// format reminder after a parse failure.
    pub fn append_to_last_user(&mut self, text: &str) {
        if let Some(turn) = self.turns.iter_mut().rev().find(|t| t.role == Role::User) {
            turn.content.push('\n');
            turn.content.push_str(text);
        } else {
            self.turns.push(ChatTurn::user(text));
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    /// Network-level failure that survived the retry budget.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    /// The provider answered and said no; not retried.
    #[error("provider error (status {status}): {message}")]
    Provider { status: u16, message: String },
    /// The configured call cap was reached before this call.
    #[error("call budget of {cap} exhausted")]
    BudgetExceeded { cap: u64 },
}

/// A completion source. Implementations must be callable from worker threads.
pub trait ChatBackend: Send + Sync {
    /// Returns exactly `request.n_samples` assistant texts, verbatim.
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        (**self).complete(request)
    }
}

/// Counts calls and enforces an optional cap. The first call past the cap
/// fails with [`LlmError::BudgetExceeded`]; earlier calls are unaffected.
pub struct BudgetedBackend<B> {
    inner: B,
    used: AtomicU64,
    cap: Option<u64>,
}

impl<B: ChatBackend> BudgetedBackend<B> {
    pub fn new(inner: B, cap: Option<u64>) -> Self {
        BudgetedBackend { inner, used: AtomicU64::new(0), cap }
    }

    /// Calls admitted so far, including ones that later failed downstream.
    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }
}

impl<B: ChatBackend> ChatBackend for BudgetedBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
        loop {
            let current = self.used.load(Ordering::SeqCst);
            if let Some(cap) = self.cap {
                if current >= cap {
                    return Err(LlmError::BudgetExceeded { cap });
                }
            }
            if self
                .used
                .compare_exchange(current, current + 1, Ordering::SeqCst, Ordering::SeqCst)
                .is_ok()
            {
                break;
            }
        }
        self.inner.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed;

    impl ChatBackend for Fixed {
        fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, LlmError> {
            Ok(vec!["ok".to_string(); request.n_samples])
        }
    }

    #[test]
    fn budget_fires_exactly_at_the_cap() {
        let backend = BudgetedBackend::new(Fixed, Some(3));
        let request = ChatRequest::new("s", vec![ChatTurn::user("u")]);
        for _ in 0..3 {
            backend.complete(&request).unwrap();
        }
        assert_eq!(backend.used(), 3);
        let err = backend.complete(&request).unwrap_err();
        assert!(matches!(err, LlmError::BudgetExceeded { cap: 3 }));
        assert_eq!(backend.used(), 3);
    }

    #[test]
    fn uncapped_budget_still_counts() {
        let backend = BudgetedBackend::new(Fixed, None);
        let request = ChatRequest::new("s", vec![ChatTurn::user("u")]);
        for _ in 0..5 {
            backend.complete(&request).unwrap();
        }
        assert_eq!(backend.used(), 5);
    }

    #[test]
    fn hint_lands_on_the_final_user_turn() {
        let mut request = ChatRequest::new(
            "s",
            vec![
                ChatTurn::user("first"),
                ChatTurn::assistant("a"),
                ChatTurn::user("second"),
            ],
        );
        request.append_to_last_user("hint");
        assert_eq!(request.turns[2].content, "second\nhint");
        assert_eq!(request.turns[0].content, "first");
    }
}
