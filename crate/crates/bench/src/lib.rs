//! Fixture builders shared by the pipeline benchmarks.

use preact_core::agent::{template, PromptTemplate};
use preact_core::llm::{Matcher, ScriptedPolicy};
use preact_core::{EnvFamily, Framework, Outcome, PredictedOutcome, Step, Trajectory};

/// A synthetic transcript of `n` completed turns with two-entry blocks.
pub fn transcript_steps(n: usize) -> Vec<Step> {
    (1..=n)
        .map(|index| Step {
            index,
            thought: format!("Weigh the options for turn {index}."),
            action: format!("go to cabinet {index}"),
            prediction: vec![
                PredictedOutcome::new("The cabinet holds the target.", "Take it and move on."),
                PredictedOutcome::new("The cabinet is empty.", "Try the next receptacle."),
            ],
            observation: Some(format!("You arrive at cabinet {index}. The cabinet {index} is closed.")),
        })
        .collect()
}

/// Wraps a transcript into a full trajectory for serialization benchmarks.
pub fn transcript_trajectory(n: usize) -> Trajectory {
    Trajectory {
        task_id: "hh/bench".into(),
        env: "hh".into(),
        framework: Framework::PreAct,
        o0: "You are in the middle of a room.".into(),
        steps: transcript_steps(n),
        reflections: Vec::new(),
        outcome: Outcome::MaxTurnsExceeded,
        score: 0.0,
        seed: 0,
    }
}

/// One representative rendered assistant turn per template family.
pub fn rendered_turns() -> Vec<(PromptTemplate, String)> {
    let block = [
        PredictedOutcome::new("The command prints the count.", "Use it in the answer."),
        PredictedOutcome::new("The command errors out.", "Adjust the path and retry."),
    ];
    [
        (EnvFamily::Hh, "go to fridge 1"),
        (EnvFamily::Os, "wc -l /tmp/notes.txt"),
        (EnvFamily::Db, "SELECT city FROM shops WHERE shop_name = 'Lotus'"),
        (EnvFamily::Ltp, "Had she already put sugar in the first cup?"),
        (EnvFamily::Qa, "Search[lighthouse]"),
    ]
    .into_iter()
    .map(|(family, action)| {
        let template = template(family, Framework::PreAct).expect("predictive template ships");
        let rendered = template.render_assistant("Work through the next step.", action, &block);
        (template, rendered)
    })
    .collect()
}

/// Observation-keyed script that walks the lettuce oracle to success.
pub fn lettuce_policy() -> ScriptedPolicy {
    let preact = template(EnvFamily::Hh, Framework::PreAct).unwrap();
    let turn = |thought: &str, action: &str| {
        preact.render_assistant(
            thought,
            action,
            &[PredictedOutcome::new("The step works out.", "Continue with the plan.")],
        )
    };
    ScriptedPolicy::with_default(turn("Start at the sidetable.", "go to sidetable 1"))
        .rule(
            Matcher::Contains("You arrive at diningtable 1".into()),
            turn("Deliver it.", "put lettuce 1 in/on diningtable 1"),
        )
        .rule(
            Matcher::Contains("You pick up the lettuce 1".into()),
            turn("Carry it over.", "go to diningtable 1"),
        )
        .rule(
            Matcher::Contains("You arrive at sidetable 1".into()),
            turn("Grab it.", "take lettuce 1 from sidetable 1"),
        )
}
