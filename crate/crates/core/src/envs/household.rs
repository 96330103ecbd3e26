//! Household simulator: one room of receptacles, a carry capacity of one, and
//! a put-object-in-place goal. Invalid actions answer "Nothing happened."

use serde::{Deserialize, Serialize};

use super::{EnvOutcome, TaskEnv, TaskSpec};
use crate::types::EnvFamily;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Receptacle {
    pub name: String,
    #[serde(default)]
    pub openable: bool,
    /// Only meaningful when openable; closed receptacles hide their contents.
    #[serde(default)]
    pub open: bool,
    #[serde(default)]
    pub contents: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HouseholdParams {
    pub receptacles: Vec<Receptacle>,
    pub target_object: String,
    pub target_receptacle: String,
}

pub struct HouseholdEnv {
    id: String,
    max_turns: usize,
    o0: String,
    receptacles: Vec<Receptacle>,
    target_object: String,
    target_receptacle: String,
    at: Option<usize>,
    carrying: Option<String>,
    solved: bool,
}

const NOTHING: &str = "Nothing happened.";

fn listing(contents: &[String], preposition: &str) -> String {
    if contents.is_empty() {
        format!("{preposition} it, you see nothing.")
    } else {
        let mut names = contents.iter().map(|o| format!("a {o}")).collect::<Vec<_>>();
        let last = names.pop().unwrap();
        if names.is_empty() {
            format!("{preposition} it, you see {last}.")
        } else {
            format!("{preposition} it, you see {} and {last}.", names.join(", "))
        }
    }
}

impl HouseholdEnv {
    pub fn new(spec: &TaskSpec, params: HouseholdParams) -> Self {
        HouseholdEnv {
            id: spec.id.clone(),
            max_turns: spec.max_turns(),
            o0: spec.initial_observation(),
            receptacles: params.receptacles,
            target_object: params.target_object,
            target_receptacle: params.target_receptacle,
            at: None,
            carrying: None,
            solved: false,
        }
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.receptacles.iter().position(|r| r.name == name)
    }

    fn preposition(rec: &Receptacle) -> &'static str {
        if rec.openable {
            "In"
        } else {
            "On"
        }
    }

    fn arrive_text(&self, idx: usize) -> String {
        let rec = &self.receptacles[idx];
        if rec.openable && !rec.open {
            format!("You arrive at {}. The {} is closed.", rec.name, rec.name)
        } else {
            format!(
                "You arrive at {}. {}",
                rec.name,
                listing(&rec.contents, Self::preposition(rec))
            )
        }
    }

    fn reply(&self, text: impl Into<String>) -> EnvOutcome {
        EnvOutcome {
            observation: text.into(),
            done: self.solved,
            score: if self.solved { 1.0 } else { 0.0 },
        }
    }

    fn act(&mut self, action: &str) -> EnvOutcome {
        let action = action.trim();
        if let Some(name) = action.strip_prefix("go to ") {
            if let Some(idx) = self.find(name.trim()) {
                self.at = Some(idx);
                return self.reply(self.arrive_text(idx));
            }
        } else if let Some(name) = action.strip_prefix("open ") {
            if let Some(idx) = self.find(name.trim()) {
                if self.at == Some(idx) && self.receptacles[idx].openable {
                    let was_closed = !self.receptacles[idx].open;
                    self.receptacles[idx].open = true;
                    if was_closed {
                        let rec = &self.receptacles[idx];
                        return self.reply(format!(
                            "You open the {}. The {} is open. {}",
                            rec.name,
                            rec.name,
                            listing(&rec.contents, "In")
                        ));
                    }
                }
            }
        } else if let Some(name) = action.strip_prefix("close ") {
            if let Some(idx) = self.find(name.trim()) {
                if self.at == Some(idx) && self.receptacles[idx].openable && self.receptacles[idx].open {
                    self.receptacles[idx].open = false;
                    return self.reply(format!("You close the {}.", self.receptacles[idx].name));
                }
            }
        } else if let Some(name) = action.strip_prefix("examine ") {
            if let Some(idx) = self.find(name.trim()) {
                if self.at == Some(idx) {
                    let rec = &self.receptacles[idx];
                    if rec.openable && !rec.open {
                        return self.reply(format!("The {} is closed.", rec.name));
                    }
                    return self.reply(listing(&rec.contents, Self::preposition(rec)));
                }
            }
        } else if let Some(rest) = action.strip_prefix("take ") {
            if let Some((object, name)) = rest.split_once(" from ") {
                let (object, name) = (object.trim(), name.trim());
                if let Some(idx) = self.find(name) {
                    let rec = &self.receptacles[idx];
                    let visible = !rec.openable || rec.open;
                    if self.at == Some(idx)
                        && visible
                        && self.carrying.is_none()
                        && rec.contents.iter().any(|o| o == object)
                    {
                        let rec = &mut self.receptacles[idx];
                        rec.contents.retain(|o| o != object);
                        self.carrying = Some(object.to_string());
                        return self
                            .reply(format!("You pick up the {object} from the {name}."));
                    }
                }
            }
        } else if let Some(rest) = action.strip_prefix("put ") {
            if let Some((object, name)) = rest.split_once(" in/on ") {
                let (object, name) = (object.trim(), name.trim());
                if let Some(idx) = self.find(name) {
                    let rec = &self.receptacles[idx];
                    let open_enough = !rec.openable || rec.open;
                    if self.at == Some(idx)
                        && open_enough
                        && self.carrying.as_deref() == Some(object)
                    {
                        self.carrying = None;
                        self.receptacles[idx].contents.push(object.to_string());
                        if object == self.target_object && name == self.target_receptacle {
                            self.solved = true;
                        }
                        return self.reply(format!("You put the {object} in/on the {name}."));
                    }
                }
            }
        }
        self.reply(NOTHING)
    }
}

impl TaskEnv for HouseholdEnv {
    fn task_id(&self) -> &str {
        &self.id
    }

    fn family(&self) -> EnvFamily {
        EnvFamily::Hh
    }

    fn max_turns(&self) -> usize {
        self.max_turns
    }

    fn initial_observation(&self) -> String {
        let names = self
            .receptacles
            .iter()
            .map(|r| format!("a {}", r.name))
            .collect::<Vec<_>>()
            .join(", ");
        format!("You are in the middle of a room. Looking around you, you see {names}.\n\n{}", self.o0)
    }

    fn step(&mut self, action: &str) -> EnvOutcome {
        if self.solved {
            return self.reply(NOTHING);
        }
        self.act(action)
    }

    fn partial_score(&self) -> f64 {
        if self.solved {
            1.0
        } else {
            0.0
        }
    }

    fn available_actions(&self) -> Option<String> {
        let mut actions: Vec<String> = Vec::new();
        for (idx, rec) in self.receptacles.iter().enumerate() {
            if self.at != Some(idx) {
                actions.push(format!("go to {}", rec.name));
            }
        }
        if let Some(idx) = self.at {
            let rec = &self.receptacles[idx];
            if rec.openable {
                actions.push(format!(
                    "{} {}",
                    if rec.open { "close" } else { "open" },
                    rec.name
                ));
            }
            actions.push(format!("examine {}", rec.name));
            if !rec.openable || rec.open {
                if self.carrying.is_none() {
                    for object in &rec.contents {
                        actions.push(format!("take {object} from {}", rec.name));
                    }
                }
                if let Some(carried) = &self.carrying {
                    actions.push(format!("put {carried} in/on {}", rec.name));
                }
            }
        }
        Some(format!("Available actions of the current round: [{}]", actions.join(", ")))
    }
}
