//! A miniature household world with four actions and the two native
//! workers that connect it to shared state.
//!
//! The world has a handful of receptacles and portable objects. Actions are
//! plain text commands:
//!
//! ```text
//! go to <receptacle>
//! take <object> from <receptacle>
//! clean <object> with <sink>
//! put <object> in/on <receptacle>
//! ```
//!
//! The task is complete once the goal object has been cleaned and put on the
//! goal receptacle. The whole world state round-trips through the `/env`
//! region of shared state, so [`EnvVerifier`] and [`EnvExecutor`] are pure
//! functions of their views.

use std::collections::BTreeMap;

use crate::scheduler::Event;
use crate::state::{Map, Patch, PatchOperation, Pointer, Value};
use crate::value;
use crate::views::View;

use super::worker::{Proposal, Worker, WorkerError};

pub const START: &str = "middle of room";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    GoTo(String),
    Take { object: String, from: String },
    Clean { object: String, with: String },
    Put { object: String, on: String },
}

impl Action {
    pub fn parse(text: &str) -> Option<Action> {
        let text = text.trim();
        if let Some(r) = text.strip_prefix("go to ") {
            return Some(Action::GoTo(r.to_owned()));
        }
        if let Some(r) = text.strip_prefix("take ") {
            let (object, from) = r.split_once(" from ")?;
            return Some(Action::Take { object: object.into(), from: from.into() });
        }
        if let Some(r) = text.strip_prefix("clean ") {
            let (object, with) = r.split_once(" with ")?;
            return Some(Action::Clean { object: object.into(), with: with.into() });
        }
        if let Some(r) = text.strip_prefix("put ") {
            let (object, on) = r.split_once(" in/on ")?;
            return Some(Action::Put { object: object.into(), on: on.into() });
        }
        None
    }

    pub fn render(&self) -> String {
        match self {
            Action::GoTo(r) => format!("go to {r}"),
            Action::Take { object, from } => format!("take {object} from {from}"),
            Action::Clean { object, with } => format!("clean {object} with {with}"),
            Action::Put { object, on } => format!("put {object} in/on {on}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: String,
    pub admissible: bool,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiniEnv {
    pub receptacles: Vec<String>,
    pub sink: String,
    /// Object to the receptacle it rests on; held objects are absent.
    pub objects: BTreeMap<String, String>,
    pub goal_object: String,
    pub goal_receptacle: String,
    pub location: String,
    pub holding: Option<String>,
    pub cleaned: Vec<String>,
    pub steps: u64,
    pub observation: String,
}

impl MiniEnv {
    /// The apple-on-dining-table household.
    pub fn kitchen() -> MiniEnv {
        let receptacles = ["countertop 1", "diningtable 1", "fridge 1", "sinkbasin 1"];
        MiniEnv {
            receptacles: receptacles.iter().map(|s| s.to_string()).collect(),
            sink: "sinkbasin 1".into(),
            objects: [("apple 1", "countertop 1"), ("mug 1", "diningtable 1")]
                .into_iter()
                .map(|(o, r)| (o.to_owned(), r.to_owned()))
                .collect(),
            goal_object: "apple 1".into(),
            goal_receptacle: "diningtable 1".into(),
            location: START.into(),
            holding: None,
            cleaned: Vec::new(),
            steps: 0,
            observation: "You are in the middle of a room. Your task is to: put a clean apple in diningtable.".into(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.objects.get(&self.goal_object) == Some(&self.goal_receptacle) && self.cleaned.contains(&self.goal_object)
    }

    pub fn is_admissible(&self, action: &Action) -> bool {
        if self.is_done() {
            return false;
        }
        match action {
            Action::GoTo(r) => self.receptacles.contains(r) && *r != self.location,
            Action::Take { object, from } => {
                self.holding.is_none() && self.location == *from && self.objects.get(object) == Some(from)
            }
            Action::Clean { object, with } => {
                self.holding.as_ref() == Some(object) && *with == self.sink && self.location == self.sink
            }
            Action::Put { object, on } => self.holding.as_ref() == Some(object) && self.location == *on,
        }
    }

    /// Every admissible command in the current state, sorted.
    pub fn admissible_actions(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.receptacles {
            out.push(Action::GoTo(r.clone()));
        }
        for (object, at) in &self.objects {
            out.push(Action::Take { object: object.clone(), from: at.clone() });
        }
        if let Some(h) = &self.holding {
            out.push(Action::Clean { object: h.clone(), with: self.sink.clone() });
            out.push(Action::Put { object: h.clone(), on: self.location.clone() });
        }
        let mut out: Vec<String> = out.into_iter().filter(|a| self.is_admissible(a)).map(|a| a.render()).collect();
        out.sort();
        out
    }

    /// Applies `command`. Inadmissible or unparsable commands leave the world
    /// unchanged.
    pub fn step(&mut self, command: &str) -> Step {
        let Some(action) = Action::parse(command).filter(|a| self.is_admissible(a)) else {
            return Step { observation: "Nothing happens.".into(), admissible: false, done: self.is_done() };
        };
        self.steps += 1;
        self.observation = match &action {
            Action::GoTo(r) => {
                self.location = r.clone();
                let here: Vec<&str> = self.objects.iter().filter(|(_, at)| *at == r).map(|(o, _)| o.as_str()).collect();
                if here.is_empty() {
                    format!("You arrive at {r}. On the {r}, you see nothing.")
                } else {
                    format!("You arrive at {r}. On the {r}, you see {}.", here.join(", "))
                }
            }
            Action::Take { object, from } => {
                self.objects.remove(object);
                self.holding = Some(object.clone());
                format!("You pick up the {object} from the {from}.")
            }
            Action::Clean { object, with } => {
                if !self.cleaned.contains(object) {
                    self.cleaned.push(object.clone());
                }
                format!("You clean the {object} using the {with}.")
            }
            Action::Put { object, on } => {
                self.holding = None;
                self.objects.insert(object.clone(), on.clone());
                format!("You put the {object} in/on the {on}.")
            }
        };
        Step { observation: self.observation.clone(), admissible: true, done: self.is_done() }
    }

    /// A navigation hint for an inadmissible action, when one helps.
    pub fn hint_for(&self, action: &Action) -> Option<String> {
        let needed = match action {
            Action::Take { from, .. } => from,
            Action::Clean { .. } => &self.sink,
            Action::Put { on, .. } => on,
            Action::GoTo(_) => return None,
        };
        (self.location != *needed).then(|| Action::GoTo(needed.clone()).render())
    }

    pub fn to_value(&self) -> Value {
        let strings = |v: &[String]| Value::Array(v.iter().cloned().map(Value::String).collect());
        let objects: Map = self.objects.iter().map(|(o, r)| (o.clone(), Value::string(r.clone()))).collect();
        value!({
            "receptacles": strings(&self.receptacles),
            "sink": self.sink.clone(),
            "objects": Value::Object(objects),
            "goal_object": self.goal_object.clone(),
            "goal_receptacle": self.goal_receptacle.clone(),
            "location": self.location.clone(),
            "holding": self.holding.clone().map(Value::String).unwrap_or(Value::Null),
            "cleaned": strings(&self.cleaned),
            "steps": self.steps,
            "observation": self.observation.clone(),
            "admissible": strings(&self.admissible_actions()),
            "done": self.is_done()
        })
    }

    pub fn from_value(v: &Value) -> Option<MiniEnv> {
        let s = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_owned);
        let list = |k: &str| -> Option<Vec<String>> {
            v.get(k)?.as_array()?.iter().map(|x| x.as_str().map(str::to_owned)).collect()
        };
        let objects = v
            .get("objects")?
            .as_object()?
            .iter()
            .map(|(o, r)| r.as_str().map(|r| (o.clone(), r.to_owned())))
            .collect::<Option<BTreeMap<_, _>>>()?;
        Some(MiniEnv {
            receptacles: list("receptacles")?,
            sink: s("sink")?,
            objects,
            goal_object: s("goal_object")?,
            goal_receptacle: s("goal_receptacle")?,
            location: s("location")?,
            holding: s("holding"),
            cleaned: list("cleaned")?,
            steps: v.get("steps")?.as_u64()?,
            observation: s("observation")?,
        })
    }
}

fn env_in(view: &View) -> Result<MiniEnv, WorkerError> {
    view.field(&Pointer::from_segments(["env"]))
        .and_then(MiniEnv::from_value)
        .ok_or_else(|| WorkerError::Failed("view has no readable /env world".into()))
}

fn command_at(view: &View, action: &Pointer) -> Result<String, WorkerError> {
    view.field(&action.child("cmd"))
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| WorkerError::Failed(format!("no command at {action}/cmd")))
}

/// Judges each newly proposed action in `/actions` against the world.
///
/// Woken by the append event of an action. Admissible actions become
/// `approved` and clear `/repair/hint`; the rest become `inadmissible` and
/// leave a hint for the actor.
#[derive(Clone, Copy, Debug, Default)]
pub struct EnvVerifier;

impl Worker for EnvVerifier {
    fn invoke(&mut self, view: &View, event: &Event) -> Result<Proposal, WorkerError> {
        let env = env_in(view)?;
        let cmd = command_at(view, &event.path)?;
        let status = event.path.child("status");
        let action = Action::parse(&cmd);
        let admissible = action.as_ref().is_some_and(|a| env.is_admissible(a));
        let (verdict, hint) = if admissible {
            ("approved", Value::Null)
        } else {
            let hint = action.as_ref().and_then(|a| env.hint_for(a)).unwrap_or_else(|| "choose an admissible action".into());
            ("inadmissible", Value::String(hint))
        };
        Ok(Proposal::Patch(Patch(vec![
            PatchOperation::test(status.clone(), Value::string("proposed")),
            PatchOperation::replace(status, Value::string(verdict)),
            PatchOperation::replace(Pointer::from_segments(["repair", "hint"]), hint),
        ])))
    }
}

/// Executes approved actions and writes the new world back into `/env`.
///
/// Woken by the status change of an action. Each `/env` field is replaced
/// separately, with `step` and `done` last.
#[derive(Clone, Copy, Debug, Default)]
pub struct EnvExecutor;

impl Worker for EnvExecutor {
    fn invoke(&mut self, view: &View, event: &Event) -> Result<Proposal, WorkerError> {
        let action = event.path.parent().ok_or_else(|| WorkerError::Failed("event is not an action status".into()))?;
        let mut env = env_in(view)?;
        let cmd = command_at(view, &action)?;
        let before = env.to_value();
        let step = env.step(&cmd);
        let after = env.to_value();
        let mut ops = vec![PatchOperation::replace(action.child("status"), Value::string(if step.admissible { "executed" } else { "failed" }))];
        let env_ptr = Pointer::from_segments(["env"]);
        let last = ["steps", "done"];
        let fields = after.as_object().expect("object");
        for (key, value) in fields.iter().filter(|(k, _)| !last.contains(&k.as_str())) {
            if before.get(key) != Some(value) {
                ops.push(PatchOperation::replace(env_ptr.child(key), value.clone()));
            }
        }
        for key in last {
            ops.push(PatchOperation::replace(env_ptr.child(key), fields[key].clone()));
        }
        Ok(Proposal::Patch(Patch(ops)))
    }
}
