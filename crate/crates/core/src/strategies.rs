//! Strategies layered over the plain loop: reflexion retries, tree-of-thought
//! sampling with vote selection, and prediction hallucination injected from a
//! cross-task bank.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    parse_turn, reflexion_text, EpisodeConfig, EpisodeError, KeywordMatcher, ParseError,
    ParsedTurn, PromptTemplate, TurnOutcome, TurnPolicy,
};
use crate::envs::{reset, EnvError, TaskSpec};
use crate::llm::{ChatBackend, ChatRequest, LlmError};
use crate::types::{HistoryPolicy, Outcome, PredictedOutcome, Trajectory};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("prediction bank has no donor entries for round {round}")]
    EmptyBankForRound { round: usize },
    #[error("malformed bank line: {0}")]
    MalformedBank(String),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// One stored prediction block, keyed by source task and 1-based round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub task_id: String,
    pub round: usize,
    pub predictions: Vec<PredictedOutcome>,
}

/// Pool of harvested prediction blocks used as hallucination donors.
#[derive(Debug, Clone, Default)]
pub struct PredictionBank {
    entries: Vec<BankEntry>,
}

impl PredictionBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores every predicted block of `trajectory` under its round index.
    pub fn harvest(&mut self, trajectory: &Trajectory) {
        for step in &trajectory.steps {
            if !step.prediction.is_empty() {
                self.entries.push(BankEntry {
                    task_id: trajectory.task_id.clone(),
                    round: step.index,
                    predictions: step.prediction.clone(),
                });
            }
        }
    }

    pub fn from_trajectories<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> Self {
        let mut bank = Self::new();
        for t in trajectories {
            bank.harvest(t);
        }
        bank
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("bank entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, StrategyError> {
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let entry: BankEntry = serde_json::from_str(line)
                .map_err(|e| StrategyError::MalformedBank(e.to_string()))?;
            entries.push(entry);
        }
        Ok(PredictionBank { entries })
    }

    /// Uniform draw from the donors for `round`, never from `exclude_task`.
    pub fn draw(
        &self,
        round: usize,
        exclude_task: &str,
        rng: &mut dyn RngCore,
    ) -> Result<&BankEntry, StrategyError> {
        let pool: Vec<&BankEntry> = self
            .entries
            .iter()
            .filter(|e| e.round == round && e.task_id != exclude_task)
            .collect();
        if pool.is_empty() {
            return Err(StrategyError::EmptyBankForRound { round });
        }
        Ok(pool[uniform_index(rng, pool.len())])
    }
}

/// 53-bit uniform draw in [0, 1).
fn uniform_f64(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform_index(rng: &mut dyn RngCore, len: usize) -> usize {
    debug_assert!(len > 0);
    (rng.next_u64() % len as u64) as usize
}

/// With probability `h`, replaces the turn's predictions with a stored block
/// for the same round from another task. `h <= 0` is the identity and draws
/// nothing from `rng`; returns whether a replacement happened.
pub fn inject_hallucination(
    turn: &mut ParsedTurn,
    round: usize,
    task_id: &str,
    bank: &PredictionBank,
    h: f64,
    rng: &mut dyn RngCore,
) -> Result<bool, StrategyError> {
    if h <= 0.0 {
        return Ok(false);
    }
    if uniform_f64(rng) >= h {
        return Ok(false);
    }
    let donor = bank.draw(round, task_id, rng)?;
    turn.predictions = donor.predictions.clone();
    Ok(true)
}

/// ReAct-style transcript of a finished trial for the reflexion prompt.
pub fn reflexion_transcript(trajectory: &Trajectory) -> String {
    let mut out = trajectory.o0.clone();
    for step in &trajectory.steps {
        if !step.thought.is_empty() {
            out.push_str(&format!("\nThought: {}", step.thought));
        }
        out.push_str(&format!("\nAction: {}", step.action));
        if let Some(obs) = &step.observation {
            out.push_str(&format!("\nObservation: {obs}"));
        }
    }
    out
}

/// Fills the reflexion prompt for one failed trajectory.
pub fn reflexion_request(trajectory: &Trajectory, goal: &str) -> ChatRequest {
    let filled = reflexion_text()
        .replace("{examples}", "")
        .replace("{question}", goal)
        .replace("{scratchpad}", &reflexion_transcript(trajectory));
    ChatRequest::new(filled, Vec::new())
}

/// Asks the backend for one reflection sentence over a failed trial.
pub fn generate_reflection(
    backend: &dyn ChatBackend,
    trajectory: &Trajectory,
    goal: &str,
) -> Result<String, LlmError> {
    let texts = backend.complete(&reflexion_request(trajectory, goal))?;
    Ok(texts.into_iter().next().unwrap_or_default().trim().to_string())
}

/// Runs up to `trials` episodes, carrying a growing reflection prefix, and
/// stops early on the first success. Every trial's trajectory is returned.
pub fn run_with_reflexion(
    backend: &dyn ChatBackend,
    spec: &TaskSpec,
    template: &PromptTemplate,
    base_policy: HistoryPolicy,
    config: &EpisodeConfig,
    trials: usize,
) -> Result<Vec<Trajectory>, StrategyError> {
    let trials = trials.max(1);
    let policy = HistoryPolicy::new(base_policy.retention, true);
    let mut reflections: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for trial in 0..trials {
        let mut env = reset(spec)?;
        let mut trial_config = config.clone();
        trial_config.seed = config.seed.wrapping_add(trial as u64);
        let trajectory = crate::agent::run_episode(
            backend,
            env.as_mut(),
            template,
            policy,
            &trial_config,
            &reflections,
        )?;
        let succeeded = trajectory.outcome == Outcome::Success;
        out.push(trajectory);
        if succeeded {
            break;
        }
        if trial + 1 < trials {
            let reflection = generate_reflection(backend, out.last().expect("one trial ran"), &spec.goal)?;
            if !reflection.is_empty() {
                reflections.push(reflection);
            }
        }
    }
    Ok(out)
}

/// Tree-of-thought sampling knobs.
#[derive(Debug, Clone)]
pub struct TotOptions {
    /// Candidate replies sampled per turn.
    pub n: usize,
    /// Per-candidate hallucination probability; requires a bank when > 0.
    pub h: f64,
}

impl Default for TotOptions {
    fn default() -> Self {
        TotOptions { n: 1, h: 0.0 }
    }
}

/// Turn policy that samples `n` candidates, optionally injects hallucinated
/// prediction blocks, and selects by a vote prompt. With `n = 1` it degrades
/// to exactly the plain single-completion turn.
pub struct TotPolicy<'a> {
    pub options: TotOptions,
    pub bank: Option<&'a PredictionBank>,
    pub task_id: String,
}

fn first_unsigned_integer(text: &str) -> Option<u64> {
    let mut digits = String::new();
    for c in text.chars() {
        if c.is_ascii_digit() {
            digits.push(c);
        } else if !digits.is_empty() {
            break;
        }
    }
    digits.parse().ok()
}

fn vote_select(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    candidates: &[(ParsedTurn, String)],
) -> Result<usize, EpisodeError> {
    let mut prompt = String::from(
        "Several candidate replies for this turn follow. Choose the one most likely to accomplish the task. Answer with the number of the best candidate.",
    );
    for (i, (_, raw)) in candidates.iter().enumerate() {
        prompt.push_str(&format!("\n\nCandidate {}:\n{}", i + 1, raw));
    }
    let mut vote_request = request.clone();
    vote_request.n_samples = 1;
    vote_request.append_to_last_user(&prompt);
    let texts = backend.complete(&vote_request)?;
    let reply = texts.into_iter().next().unwrap_or_default();
    let pick = first_unsigned_integer(&reply).unwrap_or(1);
    if (1..=candidates.len() as u64).contains(&pick) {
        Ok(pick as usize - 1)
    } else {
        Ok(0)
    }
}

impl TurnPolicy for TotPolicy<'_> {
    fn take_turn(
        &self,
        backend: &dyn ChatBackend,
        request: &ChatRequest,
        template: &PromptTemplate,
        round: usize,
        rng: &mut dyn RngCore,
    ) -> Result<TurnOutcome, EpisodeError> {
        let n = self.options.n.max(1);
        let texts = if n == 1 {
            backend.complete(request)?
        } else {
            let mut sample_request = request.clone();
            sample_request.n_samples = n;
            backend.complete(&sample_request)?
        };

        let mut candidates: Vec<(ParsedTurn, String)> = Vec::new();
        let mut first_failure: Option<(String, ParseError)> = None;
        for raw in texts {
            match parse_turn(&raw, template) {
                Ok(turn) => candidates.push((turn, raw)),
                Err(error) => {
                    if first_failure.is_none() {
                        first_failure = Some((raw, error));
                    }
                }
            }
        }
        if candidates.is_empty() {
            let (raw, error) =
                first_failure.unwrap_or((String::new(), ParseError::EmptyResponse));
            return Ok(TurnOutcome::Unparseable { raw, error });
        }

        if template.framework.is_predictive() && self.options.h > 0.0 {
            let bank = self.bank.ok_or_else(|| {
                EpisodeError::Transform("hallucination requested without a prediction bank".into())
            })?;
            for (turn, _) in candidates.iter_mut() {
                inject_hallucination(turn, round, &self.task_id, bank, self.options.h, rng)
                    .map_err(|e| EpisodeError::Transform(e.to_string()))?;
            }
        }

        let chosen = if candidates.len() == 1 {
            0
        } else {
            vote_select(backend, request, &candidates)?
        };
        let (turn, raw) = candidates.swap_remove(chosen);
        Ok(TurnOutcome::Parsed { turn, raw })
    }
}

/// Runs one episode under the tree-of-thought policy.
pub fn run_with_tot(
    backend: &dyn ChatBackend,
    spec: &TaskSpec,
    template: &PromptTemplate,
    policy: HistoryPolicy,
    config: &EpisodeConfig,
    options: &TotOptions,
    bank: Option<&PredictionBank>,
) -> Result<Trajectory, StrategyError> {
    let mut env = reset(spec)?;
    let turn_policy =
        TotPolicy { options: options.clone(), bank, task_id: spec.id.clone() };
    Ok(crate::agent::run_episode_with(
        &turn_policy,
        &KeywordMatcher::default(),
        backend,
        env.as_mut(),
        template,
        policy,
        config,
        &[],
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{run_episode, template};
    use crate::llm::{Matcher, Responder, ScriptedPolicy, ScriptedRule};
    use crate::types::{EnvFamily, Framework, Step};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank_with(entries: &[(&str, usize, &str)]) -> PredictionBank {
        let mut bank = PredictionBank::new();
        for (task, round, category) in entries {
            bank.entries.push(BankEntry {
                task_id: task.to_string(),
                round: *round,
                predictions: vec![PredictedOutcome::new(*category, "m.")],
            });
        }
        bank
    }

    fn turn_with(category: &str) -> ParsedTurn {
        ParsedTurn {
            thought: "t".into(),
            action: "a".into(),
            predictions: vec![PredictedOutcome::new(category, "m.")],
        }
    }

    #[test]
    fn bank_harvests_rounds_and_round_trips_through_jsonl() {
        let t = Trajectory {
            task_id: "hh/x".into(),
            env: "hh".into(),
            framework: Framework::PreAct,
            o0: "o0".into(),
            steps: vec![
                Step {
                    index: 1,
                    thought: "t".into(),
                    action: "a".into(),
                    prediction: vec![PredictedOutcome::new("c1.", "m1.")],
                    observation: Some("o".into()),
                },
                Step {
                    index: 2,
                    thought: "t".into(),
                    action: "a".into(),
                    prediction: vec![PredictedOutcome::new("c2.", "m2.")],
                    observation: Some("o".into()),
                },
            ],
            reflections: vec![],
            outcome: Outcome::Failure,
            score: 0.0,
            seed: 0,
        };
        let bank = PredictionBank::from_trajectories([&t]);
        assert_eq!(bank.len(), 2);
        let back = PredictionBank::from_jsonl(&bank.to_jsonl()).unwrap();
        assert_eq!(back.entries(), bank.entries());
        assert_eq!(back.entries()[1].round, 2);
    }

    #[test]
    fn draw_excludes_same_task_donors() {
        let bank = bank_with(&[("a", 1, "from-a."), ("b", 1, "from-b.")]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let donor = bank.draw(1, "a", &mut rng).unwrap();
            assert_eq!(donor.task_id, "b");
        }
        let err = bank.draw(2, "a", &mut rng).unwrap_err();
        assert!(matches!(err, StrategyError::EmptyBankForRound { round: 2 }));
        let only_self = bank_with(&[("a", 1, "c.")]);
        assert!(only_self.draw(1, "a", &mut rng).is_err());
    }

    #[test]
    fn zero_probability_injection_is_the_identity_without_a_bank() {
        let empty = PredictionBank::new();
        let mut turn = turn_with("own.");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let replaced =
            inject_hallucination(&mut turn, 1, "a", &empty, 0.0, &mut rng).unwrap();
        assert!(!replaced);
        assert_eq!(turn.predictions[0].category, "own.");
    }

    #[test]
    fn certain_injection_always_replaces() {
        let bank = bank_with(&[("donor", 3, "stolen.")]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut turn = turn_with("own.");
            let replaced =
                inject_hallucination(&mut turn, 3, "mine", &bank, 1.0, &mut rng).unwrap();
            assert!(replaced);
            assert_eq!(turn.predictions[0].category, "stolen.");
        }
    }

    #[test]
    fn half_probability_injection_is_roughly_balanced() {
        let bank = bank_with(&[("donor", 1, "stolen.")]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut replaced = 0;
        for _ in 0..1000 {
            let mut turn = turn_with("own.");
            if inject_hallucination(&mut turn, 1, "mine", &bank, 0.5, &mut rng).unwrap() {
                replaced += 1;
            }
        }
        assert!((350..=650).contains(&replaced), "got {replaced} of 1000");
    }

    fn solving_rules() -> Vec<ScriptedRule> {
        let step = |needle: &str, reply: &str| ScriptedRule {
            matcher: Matcher::LastUserContains(needle.into()),
            respond: Responder::Text(reply.into()),
        };
        vec![
            step(
                "You arrive at sidetable 1",
                "THOUGHT: Take it.\nACTION: take lettuce 1 from sidetable 1\nPREDICTED FEEDBACK:\n1. You pick up the lettuce. Carry it over.",
            ),
            step(
                "You pick up the lettuce",
                "THOUGHT: Go place it.\nACTION: go to diningtable 1\nPREDICTED FEEDBACK:\n1. You arrive at the diningtable. Put it down.",
            ),
            step(
                "You arrive at diningtable 1",
                "THOUGHT: Done after this.\nACTION: put lettuce 1 in/on diningtable 1\nPREDICTED FEEDBACK:\n1. You put the lettuce on the table. Task complete.",
            ),
        ]
    }

    #[test]
    fn reflexion_carries_lessons_into_the_next_trial() {
        let spec = crate::envs::builtin_spec("hh/trap-lettuce").unwrap();
        let tmpl = template(EnvFamily::Hh, Framework::PreAct).unwrap();
        let lesson = "Go straight to the sidetable first.";

        let mut policy = ScriptedPolicy::with_default(
            "THOUGHT: The fridge seems right.\nACTION: go to fridge 1\nPREDICTED FEEDBACK:\n1. The fridge holds the lettuce. Take it.",
        );
        policy.rules.push(ScriptedRule {
            matcher: Matcher::Contains("advanced reasoning agent".into()),
            respond: Responder::Text(lesson.into()),
        });
        for rule in solving_rules() {
            policy.rules.push(rule);
        }
        policy.rules.push(ScriptedRule {
            matcher: Matcher::Contains(lesson.into()),
            respond: Responder::Text(
                "THOUGHT: Follow the lesson.\nACTION: go to sidetable 1\nPREDICTED FEEDBACK:\n1. The sidetable holds the lettuce. Take it from there.".into(),
            ),
        });

        let config = EpisodeConfig { max_turns: Some(6), ..EpisodeConfig::default() };
        let trials =
            run_with_reflexion(&policy, &spec, &tmpl, HistoryPolicy::permanent(), &config, 3)
                .unwrap();
        assert_eq!(trials.len(), 2);
        assert_eq!(trials[0].outcome, Outcome::MaxTurnsExceeded);
        assert_eq!(trials[1].outcome, Outcome::Success);
        assert!(trials[0].reflections.is_empty());
        assert_eq!(trials[1].reflections, vec![lesson.to_string()]);
    }

    #[test]
    fn tot_vote_picks_the_numbered_candidate() {
        let spec = crate::envs::builtin_spec("hh/trap-lettuce").unwrap();
        let tmpl = template(EnvFamily::Hh, Framework::PreAct).unwrap();
        let candidates = vec![
            "THOUGHT: a.\nACTION: go to fridge 1\nPREDICTED FEEDBACK:\n1. Cold food inside. Take it.".to_string(),
            "THOUGHT: b.\nACTION: go to sidetable 1\nPREDICTED FEEDBACK:\n1. The lettuce is there. Take it.".to_string(),
            "THOUGHT: c.\nACTION: go to countertop 1\nPREDICTED FEEDBACK:\n1. A mug sits there. Ignore it.".to_string(),
        ];
        let policy = ScriptedPolicy {
            rules: vec![ScriptedRule {
                matcher: Matcher::LastUserContains("Candidate 1:".into()),
                respond: Responder::Text("2".into()),
            }],
            default: Responder::Cycle(candidates),
        };
        let config = EpisodeConfig { max_turns: Some(1), ..EpisodeConfig::default() };
        let t = run_with_tot(
            &policy,
            &spec,
            &tmpl,
            HistoryPolicy::permanent(),
            &config,
            &TotOptions { n: 3, h: 0.0 },
            None,
        )
        .unwrap();
        assert_eq!(t.steps[0].action, "go to sidetable 1");
    }

    #[test]
    fn tot_with_one_sample_equals_the_plain_loop() {
        let spec = crate::envs::builtin_spec("hh/trap-lettuce").unwrap();
        let tmpl = template(EnvFamily::Hh, Framework::PreAct).unwrap();
        let mut policy = ScriptedPolicy::with_default(
            "THOUGHT: Start.\nACTION: go to sidetable 1\nPREDICTED FEEDBACK:\n1. The lettuce is there. Take it from there.",
        );
        for rule in solving_rules() {
            policy.rules.push(rule);
        }
        let config = EpisodeConfig::seeded(9);

        let mut env = reset(&spec).unwrap();
        let plain = run_episode(
            &policy,
            env.as_mut(),
            &tmpl,
            HistoryPolicy::permanent(),
            &config,
            &[],
        )
        .unwrap();
        let tot = run_with_tot(
            &policy,
            &spec,
            &tmpl,
            HistoryPolicy::permanent(),
            &config,
            &TotOptions { n: 1, h: 0.0 },
            None,
        )
        .unwrap();
        assert_eq!(plain, tot);
        assert_eq!(plain.outcome, Outcome::Success);
    }

    #[test]
    fn unparseable_candidates_are_dropped_before_voting() {
        let spec = crate::envs::builtin_spec("hh/trap-lettuce").unwrap();
        let tmpl = template(EnvFamily::Hh, Framework::PreAct).unwrap();
        let policy = ScriptedPolicy {
            rules: vec![],
            default: Responder::Cycle(vec![
                "no structure at all".into(),
                "THOUGHT: fine.\nACTION: go to sidetable 1\nPREDICTED FEEDBACK:\n1. The lettuce is there. Take it.".into(),
            ]),
        };
        let config = EpisodeConfig { max_turns: Some(1), ..EpisodeConfig::default() };
        let t = run_with_tot(
            &policy,
            &spec,
            &tmpl,
            HistoryPolicy::permanent(),
            &config,
            &TotOptions { n: 2, h: 0.0 },
            None,
        )
        .unwrap();
        assert_eq!(t.steps[0].action, "go to sidetable 1");
    }

    #[test]
    fn missing_bank_with_positive_h_is_a_transform_error() {
        let spec = crate::envs::builtin_spec("hh/trap-lettuce").unwrap();
        let tmpl = template(EnvFamily::Hh, Framework::PreAct).unwrap();
        let policy = ScriptedPolicy::with_default(
            "THOUGHT: a.\nACTION: go to fridge 1\nPREDICTED FEEDBACK:\n1. Food. Take it.",
        );
        let config = EpisodeConfig { max_turns: Some(1), ..EpisodeConfig::default() };
        let err = run_with_tot(
            &policy,
            &spec,
            &tmpl,
            HistoryPolicy::permanent(),
            &config,
            &TotOptions { n: 1, h: 0.5 },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, StrategyError::Episode(EpisodeError::Transform(_))));
    }
}
