//! The agent loop: prompt composition from history, turn taking with parse
//! retries, refusal tracking, and prediction-mismatch hints.

pub mod parser;
pub mod templates;

pub use parser::{parse_turn, ParseError, ParsedTurn};
pub use templates::{
    answer_payload, catalog_entries, diversity_judge_text, reflexion_text, strategy_judge_text,
    template, template_hash, ActionStyle, AssistantFormat, PromptTemplate, TemplateError,
};

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envs::TaskEnv;
use crate::history::{build_history, render_messages};
use crate::llm::{ChatBackend, ChatRequest, ChatTurn, LlmError};
use crate::types::{
    Framework, HistoryPolicy, Outcome, PredictedOutcome, Retention, Step, Trajectory,
};

/// Appended to the user turn when the previous reply could not be parsed.
pub const FORMAT_REMINDER: &str = "Your previous reply did not follow the required response format. Answer again, using exactly the sections and labels given in the instructions.";

/// Default refusal phrases checked against raw replies.
pub const DEFAULT_REFUSAL_PHRASES: &[&str] = &["I'm sorry", "I cannot assist"];

/// Consecutive refusal turns that end the episode.
pub const DEFAULT_REFUSAL_LIMIT: u32 = 4;

#[derive(Debug, Error)]
pub enum ComposeError {
    /// Non-predictive frameworks have no prediction blocks to retain.
    #[error("framework {framework} cannot run with retention {retention:?}")]
    InconsistentPolicy { framework: Framework, retention: Retention },
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    /// A turn-level transform (sampling, selection, injection) failed.
    #[error("turn transform failed: {0}")]
    Transform(String),
}

/// Builds the next completion request from the episode state so far.
pub fn compose_prompt(
    template: &PromptTemplate,
    o0: &str,
    steps: &[Step],
    reflections: &[String],
    policy: HistoryPolicy,
) -> Result<ChatRequest, ComposeError> {
    if !template.framework.is_predictive() && policy.retention != Retention::None {
        return Err(ComposeError::InconsistentPolicy {
            framework: template.framework,
            retention: policy.retention,
        });
    }
    let messages = build_history(o0, steps, reflections, policy);
    let turns = render_messages(&messages, template);
    Ok(ChatRequest::new(template.system_text.clone(), turns))
}

/// Decides which predicted category, if any, covers an observation.
pub trait CategoryMatcher: Send + Sync {
    /// Index of the first covering category, scanned in listed order.
    fn match_category(&self, predictions: &[PredictedOutcome], observation: &str) -> Option<usize>;
}

/// Words carrying no signal for category matching. Negations stay out: a
/// category like "No lettuce in fridge" must keep "no" as a content word.
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "then", "than", "so", "such", "as", "is", "are",
    "was", "were", "be", "been", "being", "am", "do", "does", "did", "have", "has", "had",
    "having", "will", "would", "shall", "should", "can", "could", "may", "might", "must", "of",
    "in", "on", "at", "by", "for", "with", "from", "into", "onto", "over", "under", "to", "it",
    "its", "this", "that", "these", "those", "there", "here", "i", "you", "he", "she", "we",
    "they", "me", "him", "her", "us", "them", "my", "your", "his", "our", "their", "what",
    "which", "who", "whom", "when", "where", "why", "how", "s", "t",
];

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Overlap matcher: a category covers an observation when at least
/// `threshold` of its distinct content words occur in the observation.
/// Categories with no content words never match.
#[derive(Debug, Clone)]
pub struct KeywordMatcher {
    pub threshold: f64,
}

impl Default for KeywordMatcher {
    fn default() -> Self {
        KeywordMatcher { threshold: 0.5 }
    }
}

impl KeywordMatcher {
    fn content_words(text: &str) -> BTreeSet<String> {
        tokenize(text).filter(|w| !STOPWORDS.contains(&w.as_str())).collect()
    }
}

impl CategoryMatcher for KeywordMatcher {
    fn match_category(&self, predictions: &[PredictedOutcome], observation: &str) -> Option<usize> {
        let observed: BTreeSet<String> = tokenize(observation).collect();
        for (i, p) in predictions.iter().enumerate() {
            let words = Self::content_words(&p.category);
            if words.is_empty() {
                continue;
            }
            let hits = words.iter().filter(|w| observed.contains(*w)).count();
            if hits as f64 >= self.threshold * words.len() as f64 {
                return Some(i);
            }
        }
        None
    }
}

/// Delegates the coverage question to a backend as a yes/no query, one
/// category at a time. Backend failures count as no match.
pub struct LlmMatcher<B> {
    pub backend: B,
}

impl<B: ChatBackend> CategoryMatcher for LlmMatcher<B> {
    fn match_category(&self, predictions: &[PredictedOutcome], observation: &str) -> Option<usize> {
        for (i, p) in predictions.iter().enumerate() {
            let request = ChatRequest::new(
                "You judge whether an environment observation falls under a predicted feedback category. Reply with Yes or No only.",
                vec![ChatTurn::user(format!(
                    "Predicted feedback category: {}\nObservation: {}\nDoes the observation fall under this category?",
                    p.category, observation
                ))],
            );
            if let Ok(texts) = self.backend.complete(&request) {
                if texts.first().is_some_and(|t| t.trim().to_lowercase().starts_with("yes")) {
                    return Some(i);
                }
            }
        }
        None
    }
}

/// Result of checking one observation against the turn's predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MismatchReport {
    pub matched_index: Option<usize>,
    /// True when predictions existed and none covered the observation.
    pub mismatch: bool,
}

pub fn detect_mismatch(
    matcher: &dyn CategoryMatcher,
    predictions: &[PredictedOutcome],
    observation: &str,
) -> MismatchReport {
    if predictions.is_empty() {
        return MismatchReport { matched_index: None, mismatch: false };
    }
    match matcher.match_category(predictions, observation) {
        Some(i) => MismatchReport { matched_index: Some(i), mismatch: false },
        None => MismatchReport { matched_index: None, mismatch: true },
    }
}

/// Per-episode knobs. `max_turns: None` defers to the task's own cap.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub max_turns: Option<usize>,
    /// Re-asks after an unparseable reply this many times per turn.
    pub max_parse_retries: u32,
    pub refusal_limit: u32,
    pub refusal_phrases: Vec<String>,
    /// Appends the template's disparity hint after a prediction mismatch.
    pub disparity_hint: bool,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_turns: None,
            max_parse_retries: 1,
            refusal_limit: DEFAULT_REFUSAL_LIMIT,
            refusal_phrases: DEFAULT_REFUSAL_PHRASES.iter().map(|s| s.to_string()).collect(),
            disparity_hint: true,
            temperature: 0.0,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn seeded(seed: u64) -> Self {
        EpisodeConfig { seed, ..Self::default() }
    }
}

fn is_refusal(raw: &str, phrases: &[String]) -> bool {
    let lowered = raw.to_lowercase();
    phrases.iter().any(|p| !p.is_empty() && lowered.contains(&p.to_lowercase()))
}

/// One attempt at producing the next turn.
#[derive(Debug, Clone)]
pub enum TurnOutcome {
    Parsed { turn: ParsedTurn, raw: String },
    Unparseable { raw: String, error: ParseError },
}

impl TurnOutcome {
    pub fn raw(&self) -> &str {
        match self {
            TurnOutcome::Parsed { raw, .. } | TurnOutcome::Unparseable { raw, .. } => raw,
        }
    }
}

/// How a single turn is produced from a composed request. The plain loop uses
/// [`SingleTurn`]; sampling strategies plug in here.
pub trait TurnPolicy: Send + Sync {
    /// `round` is the 1-based index of the step about to be taken.
    fn take_turn(
        &self,
        backend: &dyn ChatBackend,
        request: &ChatRequest,
        template: &PromptTemplate,
        round: usize,
        rng: &mut dyn RngCore,
    ) -> Result<TurnOutcome, EpisodeError>;
}

/// One completion, one parse.
pub struct SingleTurn;

impl TurnPolicy for SingleTurn {
    fn take_turn(
        &self,
        backend: &dyn ChatBackend,
        request: &ChatRequest,
        template: &PromptTemplate,
        _round: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<TurnOutcome, EpisodeError> {
        let texts = backend.complete(request)?;
        let raw = texts.into_iter().next().unwrap_or_default();
        Ok(match parse_turn(&raw, template) {
            Ok(turn) => TurnOutcome::Parsed { turn, raw },
            Err(error) => TurnOutcome::Unparseable { raw, error },
        })
    }
}

enum TurnResult {
    Step(ParsedTurn),
    Refused,
    Failed,
}

/// Runs one episode with the plain single-completion turn policy and the
/// keyword mismatch matcher.
pub fn run_episode(
    backend: &dyn ChatBackend,
    env: &mut dyn TaskEnv,
    template: &PromptTemplate,
    policy: HistoryPolicy,
    config: &EpisodeConfig,
    reflections: &[String],
) -> Result<Trajectory, EpisodeError> {
    run_episode_with(
        &SingleTurn,
        &KeywordMatcher::default(),
        backend,
        env,
        template,
        policy,
        config,
        reflections,
    )
}

/// Full episode loop. Refusals are checked on the raw reply before parse
/// handling; refusal turns consume a turn but record no step. A mismatch
/// between a turn's predictions and its observation queues the template's
/// disparity hint for the next prompt.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_with(
    turn_policy: &dyn TurnPolicy,
    matcher: &dyn CategoryMatcher,
    backend: &dyn ChatBackend,
    env: &mut dyn TaskEnv,
    template: &PromptTemplate,
    policy: HistoryPolicy,
    config: &EpisodeConfig,
    reflections: &[String],
) -> Result<Trajectory, EpisodeError> {
    let o0 = env.initial_observation();
    let cap = config.max_turns.unwrap_or_else(|| env.max_turns());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut steps: Vec<Step> = Vec::new();
    let mut pending_hint = false;
    let mut consecutive_refusals = 0u32;
    let mut outcome = Outcome::MaxTurnsExceeded;
    let mut final_score: Option<f64> = None;

    let mut turns_used = 0usize;
    while turns_used < cap {
        turns_used += 1;
        let mut request = compose_prompt(template, &o0, &steps, reflections, policy)?;
        request.temperature = config.temperature;
        request.seed = config.seed;
        if pending_hint && config.disparity_hint {
            request.append_to_last_user(template.disparity_hint);
        }
        pending_hint = false;
        if let Some(actions) = env.available_actions() {
            request.append_to_last_user(&actions);
        }

        let mut attempts = 0u32;
        let result = loop {
            let round = steps.len() + 1;
            let turn_outcome = turn_policy.take_turn(backend, &request, template, round, &mut rng)?;
            if is_refusal(turn_outcome.raw(), &config.refusal_phrases) {
                break TurnResult::Refused;
            }
            match turn_outcome {
                TurnOutcome::Parsed { turn, .. } => break TurnResult::Step(turn),
                TurnOutcome::Unparseable { .. } => {
                    if attempts < config.max_parse_retries {
                        attempts += 1;
                        request.append_to_last_user(FORMAT_REMINDER);
                    } else {
                        break TurnResult::Failed;
                    }
                }
            }
        };

        match result {
            TurnResult::Refused => {
                consecutive_refusals += 1;
                if consecutive_refusals >= config.refusal_limit {
                    outcome = Outcome::Refusal;
                    break;
                }
            }
            TurnResult::Failed => {
                outcome = Outcome::ParseFailure;
                break;
            }
            TurnResult::Step(parsed) => {
                consecutive_refusals = 0;
                let reply = env.step(&parsed.action);
                let report = detect_mismatch(matcher, &parsed.predictions, &reply.observation);
                pending_hint = report.mismatch;
                steps.push(Step {
                    index: steps.len() + 1,
                    thought: parsed.thought,
                    action: parsed.action,
                    prediction: parsed.predictions,
                    observation: Some(reply.observation),
                });
                if reply.done {
                    if reply.score >= 1.0 {
                        outcome = Outcome::Success;
                        final_score = Some(1.0);
                    } else {
                        outcome = Outcome::Failure;
                        final_score = Some(reply.score);
                    }
                    break;
                }
            }
        }
    }

    let score = final_score.unwrap_or_else(|| env.partial_score()).clamp(0.0, 1.0);
    Ok(Trajectory {
        task_id: env.task_id().to_string(),
        env: env.family().to_string(),
        framework: template.framework,
        o0,
        steps,
        reflections: reflections.to_vec(),
        outcome,
        score,
        seed: config.seed,
    })
}
