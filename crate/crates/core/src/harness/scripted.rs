//! Script-driven workers: the first entry whose checks hold against the view
//! fires, and its response template is filled from the view and the event.
//!
//! Placeholders inside template strings:
//!
//! * `${event:path}` and `${event:parent}` expand to the triggering event's
//!   path and its parent, and are substituted first.
//! * `${view:/pointer}` expands to the view field at that pointer, or `null`.
//!
//! A string that consists of exactly one placeholder is replaced by the raw
//! JSON value; otherwise values are spliced in as text.

use serde::Deserialize;

use crate::scheduler::Event;
use crate::state::{canonical_string, Pointer, Value};
use crate::views::View;

use super::worker::{Proposal, Worker, WorkerError};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchCheck {
    pub path: String,
    #[serde(default, deserialize_with = "present")]
    pub equals: Option<Value>,
    #[serde(default, deserialize_with = "present")]
    pub not_equals: Option<Value>,
}

/// Keeps an explicit `null` as `Some(Value::Null)`.
fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

impl MatchCheck {
    fn holds(&self, view: &View, event: &Event) -> bool {
        let path = substitute_event(&self.path, event);
        let actual = Pointer::parse(&path).ok().and_then(|p| view.field(&p).cloned()).unwrap_or(Value::Null);
        let eq_ok = self.equals.as_ref().is_none_or(|v| *v == actual);
        let ne_ok = self.not_equals.as_ref().is_none_or(|v| *v != actual);
        eq_ok && ne_ok
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub checks: Vec<MatchCheck>,
    pub respond: Value,
}

#[derive(Debug, thiserror::Error)]
#[error("invalid script: {0}")]
pub struct ScriptError(String);

/// Either a bare list of entries or `{"entries": [...], "fallthrough": ...}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptDoc {
    Entries(Vec<ScriptEntry>),
    Full {
        entries: Vec<ScriptEntry>,
        #[serde(default)]
        fallthrough: Option<Value>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedWorker {
    entries: Vec<ScriptEntry>,
    fallthrough: Value,
}

impl ScriptedWorker {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedWorker { entries, fallthrough: Value::Array(Vec::new()) }
    }

    pub fn with_fallthrough(mut self, fallthrough: Value) -> Self {
        self.fallthrough = fallthrough;
        self
    }

    pub fn from_value(doc: &Value) -> Result<Self, ScriptError> {
        let parsed: ScriptDoc = serde_json::from_value(doc.to_json()).map_err(|e| ScriptError(e.to_string()))?;
        let (entries, fallthrough) = match parsed {
            ScriptDoc::Entries(entries) => (entries, None),
            ScriptDoc::Full { entries, fallthrough } => (entries, fallthrough),
        };
        for (i, entry) in entries.iter().enumerate() {
            for check in &entry.checks {
                if check.equals.is_some() == check.not_equals.is_some() {
                    return Err(ScriptError(format!("entry {i}: a check needs exactly one of equals, not_equals")));
                }
            }
        }
        let mut worker = ScriptedWorker::new(entries);
        if let Some(f) = fallthrough {
            worker.fallthrough = f;
        }
        Ok(worker)
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// The index of the entry that fires for this view, if any.
    pub fn matching_entry(&self, view: &View, event: &Event) -> Option<usize> {
        self.entries.iter().position(|e| e.checks.iter().all(|c| c.holds(view, event)))
    }

    /// The filled response as a JSON document.
    pub fn respond(&self, view: &View, event: &Event) -> Value {
        match self.matching_entry(view, event) {
            Some(i) => fill(&self.entries[i].respond, view, event),
            None => fill(&self.fallthrough, view, event),
        }
    }
}

impl Worker for ScriptedWorker {
    fn invoke(&mut self, view: &View, event: &Event) -> Result<Proposal, WorkerError> {
        Ok(Proposal::Document(self.respond(view, event)))
    }
}

fn substitute_event(text: &str, event: &Event) -> String {
    let parent = event.path.parent().map(|p| p.to_string()).unwrap_or_default();
    text.replace("${event:path}", &event.path.to_string()).replace("${event:parent}", &parent)
}

fn view_value(view: &View, pointer: &str) -> Value {
    Pointer::parse(pointer).ok().and_then(|p| view.field(&p).cloned()).unwrap_or(Value::Null)
}

fn fill_string(text: &str, view: &View, event: &Event) -> Value {
    let text = substitute_event(text, event);
    if let Some(inner) = text.strip_prefix("${view:").and_then(|t| t.strip_suffix('}')) {
        if !inner.contains("${") {
            return view_value(view, inner);
        }
    }
    let mut out = String::new();
    let mut rest = text.as_str();
    while let Some(start) = rest.find("${view:") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 7..];
        let Some(end) = after.find('}') else {
            out.push_str(&rest[start..]);
            rest = "";
            break;
        };
        match view_value(view, &after[..end]) {
            Value::String(s) => out.push_str(&s),
            other => out.push_str(&canonical_string(&other)),
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Value::String(out)
}

fn fill(template: &Value, view: &View, event: &Event) -> Value {
    match template {
        Value::String(s) => fill_string(s, view, event),
        Value::Array(items) => Value::Array(items.iter().map(|v| fill(v, view, event)).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), fill(v, view, event))).collect()),
        other => other.clone(),
    }
}
