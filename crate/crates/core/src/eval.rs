//! Trajectory-quality metrics: rates, game progress, correlation, and the
//! two judge-prompt scorers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{diversity_judge_text, strategy_judge_text};
use crate::envs::TaskSpec;
use crate::llm::{ChatBackend, ChatRequest, LlmError};
use crate::types::{Outcome, Step, Trajectory};

pub const STRATEGY_SCORE_MIN: i64 = -1;
pub const STRATEGY_SCORE_MAX: i64 = 3;
pub const DIVERSITY_SCORE_MAX: f64 = 100.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no trajectories to evaluate")]
    EmptyInput,
    #[error("every trajectory was excluded from the metric")]
    AllExcluded,
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("judge reply had no usable score: {0}")]
    JudgeParseFailure(String),
    #[error("degenerate correlation input: {0}")]
    DegenerateInput(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// Fraction of trajectories that ended in success.
pub fn success_rate(trajectories: &[Trajectory]) -> Result<f64, EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let hits = trajectories.iter().filter(|t| t.outcome == Outcome::Success).count();
    Ok(hits as f64 / trajectories.len() as f64)
}

/// Mean episode score with refusal episodes excluded from both numerator and
/// denominator.
pub fn normalized_gp(trajectories: &[Trajectory]) -> Result<f64, EvalError> {
    let kept: Vec<f64> = trajectories
        .iter()
        .filter(|t| t.outcome != Outcome::Refusal)
        .map(|t| t.score)
        .collect();
    if kept.is_empty() {
        return Err(EvalError::AllExcluded);
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Distinct normalized actions over total steps. Normalization is case
/// folding plus whitespace collapse.
pub fn action_diversity_proxy(trajectory: &Trajectory) -> Result<f64, EvalError> {
    if trajectory.steps.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let normalize = |a: &str| a.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let distinct: std::collections::BTreeSet<String> =
        trajectory.steps.iter().map(|s| normalize(&s.action)).collect();
    Ok(distinct.len() as f64 / trajectory.steps.len() as f64)
}

fn first_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    for (i, c) in text.char_indices() {
        if c.is_ascii_digit() {
            let start = if i > 0 && bytes[i - 1] == b'-' { i - 1 } else { i };
            let mut end = i;
            let mut seen_dot = false;
            for (j, ch) in text[i..].char_indices() {
                if ch.is_ascii_digit() {
                    end = i + j + 1;
                } else if ch == '.' && !seen_dot {
                    seen_dot = true;
                    end = i + j + 1;
                } else {
                    break;
                }
            }
            let slice = text[start..end].trim_end_matches('.');
            return slice.parse().ok();
        }
    }
    None
}

fn number_after_label(text: &str, label: &str) -> Option<f64> {
    let lower = text.to_lowercase();
    let pos = lower.find(&label.to_lowercase())?;
    first_number(&text[pos + label.len()..])
}

/// One step rendered as its thought and action, predictions stripped.
pub fn rendered_turn(step: &Step) -> String {
    let mut out = String::new();
    if !step.thought.is_empty() {
        out.push_str(&format!("\nThought: {}", step.thought));
    }
    out.push_str(&format!("\nAction: {}", step.action));
    out
}

/// Transcript prefix covering the opening observation and the first `upto`
/// completed steps. Predictions are stripped so every framework's history is
/// judged on the same material.
pub fn rendered_history(trajectory: &Trajectory, upto: usize) -> String {
    let mut out = trajectory.o0.clone();
    for step in trajectory.steps.iter().take(upto) {
        out.push_str(&rendered_turn(step));
        if let Some(obs) = &step.observation {
            out.push_str(&format!("\nObservation: {obs}"));
        }
    }
    out
}

/// Full prediction-stripped transcript of a trajectory.
pub fn trajectory_transcript(trajectory: &Trajectory) -> String {
    rendered_history(trajectory, trajectory.steps.len())
}

/// Reference solution rendered as a numbered action list.
pub fn oracle_transcript(spec: &TaskSpec) -> String {
    let mut out = String::new();
    for (i, action) in spec.oracle.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("{}. {}", i + 1, action));
    }
    out
}

/// Scores handed back for an ordered pair of judged trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityJudgment {
    pub score_a: f64,
    pub score_b: f64,
}

/// Fills the pairwise diversity prompt for two transcripts.
pub fn diversity_judge_request(transcript_a: &str, transcript_b: &str) -> ChatRequest {
    let filled = diversity_judge_text()
        .replace("(one of the trajectories)", transcript_a)
        .replace("(another of the trajectories)", transcript_b);
    ChatRequest::new(filled, Vec::new())
}

/// Extracts both 0..=100 scores; out-of-range values are failures, not clamped.
pub fn parse_diversity_scores(reply: &str) -> Result<(f64, f64), EvalError> {
    let one = number_after_label(reply, "Score 1:")
        .ok_or_else(|| EvalError::JudgeParseFailure(reply.to_string()))?;
    let two = number_after_label(reply, "Score 2:")
        .ok_or_else(|| EvalError::JudgeParseFailure(reply.to_string()))?;
    for score in [one, two] {
        if !(0.0..=DIVERSITY_SCORE_MAX).contains(&score) {
            return Err(EvalError::JudgeParseFailure(format!(
                "score {score} outside 0..={DIVERSITY_SCORE_MAX}"
            )));
        }
    }
    Ok((one, two))
}

/// Judges one pair of transcripts. With `swap` the pair is presented in
/// reversed order and the scores are swapped back, so the caller's mapping
/// from score to trajectory is unchanged.
pub fn judge_diversity(
    backend: &dyn ChatBackend,
    transcript_a: &str,
    transcript_b: &str,
    swap: bool,
) -> Result<DiversityJudgment, EvalError> {
    let request = if swap {
        diversity_judge_request(transcript_b, transcript_a)
    } else {
        diversity_judge_request(transcript_a, transcript_b)
    };
    let texts = backend.complete(&request)?;
    let reply = texts.into_iter().next().unwrap_or_default();
    let (one, two) = parse_diversity_scores(&reply)?;
    if swap {
        Ok(DiversityJudgment { score_a: two, score_b: one })
    } else {
        Ok(DiversityJudgment { score_a: one, score_b: two })
    }
}

/// Judges one pair with presentation order decided by the seed, so position
/// bias cancels over many seeds. Returns the judgment (already mapped back to
/// the caller's order) and whether the pair was presented swapped.
pub fn judge_diversity_seeded(
    backend: &dyn ChatBackend,
    transcript_a: &str,
    transcript_b: &str,
    seed: u64,
) -> Result<(DiversityJudgment, bool), EvalError> {
    let swap = ChaCha8Rng::seed_from_u64(seed).next_u64() & 1 == 1;
    Ok((judge_diversity(backend, transcript_a, transcript_b, swap)?, swap))
}

/// Win and tie fractions over a set of pairwise judgments; they sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversitySummary {
    pub a_wins: f64,
    pub b_wins: f64,
    pub ties: f64,
}

pub fn diversity_summary(judgments: &[DiversityJudgment]) -> Result<DiversitySummary, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = judgments.len() as f64;
    let mut a_wins = 0.0;
    let mut b_wins = 0.0;
    let mut ties = 0.0;
    for j in judgments {
        if j.score_a > j.score_b {
            a_wins += 1.0;
        } else if j.score_b > j.score_a {
            b_wins += 1.0;
        } else {
            ties += 1.0;
        }
    }
    Ok(DiversitySummary { a_wins: a_wins / n, b_wins: b_wins / n, ties: ties / n })
}

/// Fills the replan-quality prompt for one evaluated turn.
pub fn strategy_judge_request(ground_truth: &str, history: &str, turn: &str) -> ChatRequest {
    let filled = strategy_judge_text()
        .replace("(ground truth trajectory)", ground_truth)
        .replace("(evaluated trajectory history)", history)
        .replace("(evaluated trajectory turn)", turn);
    ChatRequest::new(filled, Vec::new())
}

/// Extracts the labeled replan score and enforces the -1..=3 range.
pub fn parse_strategy_score(reply: &str) -> Result<i64, EvalError> {
    let value = number_after_label(reply, "Last Round Replan Score:")
        .ok_or_else(|| EvalError::JudgeParseFailure(reply.to_string()))?;
    if value.fract() != 0.0 {
        return Err(EvalError::JudgeParseFailure(format!("non-integer score {value}")));
    }
    let score = value as i64;
    if !(STRATEGY_SCORE_MIN..=STRATEGY_SCORE_MAX).contains(&score) {
        return Err(EvalError::JudgeParseFailure(format!(
            "score {score} outside {STRATEGY_SCORE_MIN}..={STRATEGY_SCORE_MAX}"
        )));
    }
    Ok(score)
}

/// Scores one turn of a trajectory against the reference solution.
pub fn strategy_score_turn(
    backend: &dyn ChatBackend,
    ground_truth: &str,
    history: &str,
    turn: &str,
) -> Result<i64, EvalError> {
    let texts = backend.complete(&strategy_judge_request(ground_truth, history, turn))?;
    let reply = texts.into_iter().next().unwrap_or_default();
    parse_strategy_score(&reply)
}

/// Scores every turn of one trajectory, in order.
pub fn strategy_scores(
    backend: &dyn ChatBackend,
    ground_truth: &str,
    trajectory: &Trajectory,
) -> Result<Vec<i64>, EvalError> {
    let mut scores = Vec::with_capacity(trajectory.steps.len());
    for (i, step) in trajectory.steps.iter().enumerate() {
        let history = rendered_history(trajectory, i);
        let turn = rendered_turn(step);
        scores.push(strategy_score_turn(backend, ground_truth, &history, &turn)?);
    }
    Ok(scores)
}

/// Per-trajectory means averaged without weighting by turn count. Empty inner
/// lists are skipped; an all-empty input cannot be summarized.
pub fn strategy_metric(per_trajectory_scores: &[Vec<i64>]) -> Result<f64, EvalError> {
    if per_trajectory_scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut means = Vec::new();
    for scores in per_trajectory_scores {
        if scores.is_empty() {
            continue;
        }
        for s in scores {
            if !(STRATEGY_SCORE_MIN..=STRATEGY_SCORE_MAX).contains(s) {
                return Err(EvalError::JudgeParseFailure(format!(
                    "score {s} outside {STRATEGY_SCORE_MIN}..={STRATEGY_SCORE_MAX}"
                )));
            }
        }
        means.push(scores.iter().sum::<i64>() as f64 / scores.len() as f64);
    }
    if means.is_empty() {
        return Err(EvalError::AllExcluded);
    }
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

/// Sample Pearson correlation over paired observations.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::DegenerateInput(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(EvalError::DegenerateInput("need at least two pairs".into()));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(EvalError::DegenerateInput("zero variance".into()));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}
