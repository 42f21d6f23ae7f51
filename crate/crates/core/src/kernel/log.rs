//! Transactions and their newline-delimited JSON encoding.
//!
//! Each line is the canonical serialization of
//! `{"event", "outcome", "patch", "seq", "view_hash", "worker"}`.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scheduler::Event;
use crate::state::{canonical_string, Map, OpKind, Pointer, StateHash, Value};

/// The five acceptance stages, in evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Syntax,
    Auth,
    Apply,
    Schema,
    Invariant,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Syntax, Stage::Auth, Stage::Apply, Stage::Schema, Stage::Invariant];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Syntax => "Syntax",
            Stage::Auth => "Auth",
            Stage::Apply => "Apply",
            Stage::Schema => "Schema",
            Stage::Invariant => "Invariant",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Accepted { state_hash: StateHash },
    Rejected { stage: Stage, reason: String },
}

impl Outcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Outcome::Accepted { .. })
    }

    pub fn state_hash(&self) -> Option<StateHash> {
        match self {
            Outcome::Accepted { state_hash } => Some(*state_hash),
            Outcome::Rejected { .. } => None,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Outcome::Rejected { stage, .. } => Some(*stage),
            Outcome::Accepted { .. } => None,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            Outcome::Rejected { reason, .. } => Some(reason),
            Outcome::Accepted { .. } => None,
        }
    }

    fn to_value(&self) -> Value {
        match self {
            Outcome::Accepted { state_hash } => {
                crate::value!({"status": "accepted", "state_hash": state_hash.to_hex()})
            }
            Outcome::Rejected { stage, reason } => {
                crate::value!({"status": "rejected", "stage": stage.as_str(), "reason": reason.clone()})
            }
        }
    }
}

/// One logged proposal. `patch` holds the proposal as the worker returned
/// it: an operation array, some other JSON document, or a string of raw
/// text that did not parse.
#[derive(Clone, Debug, PartialEq)]
pub struct Transaction {
    pub seq: u64,
    pub worker: String,
    pub event: Event,
    pub view_hash: StateHash,
    pub patch: Value,
    pub outcome: Outcome,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Transaction {
    pub fn to_value(&self) -> Value {
        let mut map = Map::new();
        map.insert("seq".into(), Value::int(self.seq as i64));
        map.insert("worker".into(), Value::string(self.worker.clone()));
        map.insert(
            "event".into(),
            crate::value!({
                "seq": self.event.seq,
                "source": self.event.source.clone(),
                "path": self.event.path.to_string(),
                "op": self.event.op.as_str()
            }),
        );
        map.insert("view_hash".into(), Value::string(self.view_hash.to_hex()));
        map.insert("patch".into(), self.patch.clone());
        map.insert("outcome".into(), self.outcome.to_value());
        Value::Object(map)
    }

    /// The exact log line (without the trailing newline).
    pub fn to_line(&self) -> String {
        canonical_string(&self.to_value())
    }

    pub fn from_value(doc: &Value) -> Result<Transaction, String> {
        let obj = doc.as_object().ok_or("transaction must be an object")?;
        let allowed = ["event", "outcome", "patch", "seq", "view_hash", "worker"];
        if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(format!("unexpected field {extra:?}"));
        }
        let field = |k: &str| obj.get(k).ok_or(format!("missing field {k:?}"));
        let text = |v: &Value, what: &str| v.as_str().map(str::to_owned).ok_or(format!("{what} must be a string"));
        let hash = |v: &Value, what: &str| -> Result<StateHash, String> {
            text(v, what)?.parse().map_err(|e| format!("{what}: {e}"))
        };

        let event = field("event")?;
        let event = Event {
            seq: event.get("seq").and_then(Value::as_u64).ok_or("event.seq must be an integer")?,
            source: text(event.get("source").ok_or("event.source missing")?, "event.source")?,
            path: Pointer::parse(&text(event.get("path").ok_or("event.path missing")?, "event.path")?)
                .map_err(|e| e.to_string())?,
            op: OpKind::parse(&text(event.get("op").ok_or("event.op missing")?, "event.op")?)
                .ok_or("event.op must name an operation")?,
        };
        let outcome = field("outcome")?;
        let status = text(outcome.get("status").ok_or("outcome.status missing")?, "outcome.status")?;
        let outcome = match status.as_str() {
            "accepted" => Outcome::Accepted {
                state_hash: hash(outcome.get("state_hash").ok_or("outcome.state_hash missing")?, "state_hash")?,
            },
            "rejected" => Outcome::Rejected {
                stage: text(outcome.get("stage").ok_or("outcome.stage missing")?, "stage")?.parse()?,
                reason: text(outcome.get("reason").ok_or("outcome.reason missing")?, "reason")?,
            },
            other => return Err(format!("unknown outcome status {other:?}")),
        };
        Ok(Transaction {
            seq: field("seq")?.as_u64().ok_or("seq must be a non-negative integer")?,
            worker: text(field("worker")?, "worker")?,
            event,
            view_hash: hash(field("view_hash")?, "view_hash")?,
            patch: field("patch")?.clone(),
            outcome,
        })
    }

    pub fn parse_line(line: &str) -> Result<Transaction, String> {
        let doc = Value::parse(line).map_err(|e| e.to_string())?;
        Transaction::from_value(&doc)
    }
}

pub fn write_log<W: Write>(out: &mut W, log: &[Transaction]) -> io::Result<()> {
    for txn in log {
        writeln!(out, "{}", txn.to_line())?;
    }
    Ok(())
}

/// Renders a whole log as NDJSON text.
pub fn render_log(log: &[Transaction]) -> String {
    let mut out = Vec::new();
    write_log(&mut out, log).expect("writing to memory");
    String::from_utf8(out).expect("canonical JSON is UTF-8")
}

/// Reads NDJSON, skipping blank lines.
pub fn read_log<R: BufRead>(input: R) -> Result<Vec<Transaction>, LogError> {
    let mut log = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let txn = Transaction::parse_line(&line).map_err(|message| LogError::Parse { line: i + 1, message })?;
        log.push(txn);
    }
    Ok(log)
}
