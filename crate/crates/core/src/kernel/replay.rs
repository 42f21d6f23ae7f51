//! Deterministic replay: re-run the kernel with proposals read from a log
//! and compare every transaction it produces against the recorded one.

use std::fmt;

use serde::Serialize;

use crate::harness::{Proposal, WorkerError};
use crate::schema::{validate_blueprint, Blueprint};
use crate::scheduler::{Event, KERNEL};
use crate::state::{apply_patch, canonical_string, hash_state, Patch, StateHash, Value};
use crate::views::View;

use super::log::{Outcome, Transaction};
use super::runtime::{execute, ProposalSource, RunError, RunResult, WORKER_FAILURE};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub seq: u64,
    pub field: String,
    pub recorded: String,
    pub replayed: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "txn #{} {}: recorded {} but replay gave {}", self.seq, self.field, self.recorded, self.replayed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    /// Transactions compared pairwise.
    pub compared: usize,
    pub recorded: usize,
    pub divergences: Vec<Divergence>,
    /// The recorded log ended while the replayed run still had work queued,
    /// so only a prefix of the original run was reproduced.
    pub truncated: bool,
    pub result: RunResult,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.divergences.is_empty()
    }

    pub fn final_hash(&self) -> StateHash {
        self.result.final_hash()
    }
}

/// Feeds logged worker proposals back in order.
struct LogSource<'a> {
    worker_txns: Vec<&'a Transaction>,
    next: usize,
    mismatch: Option<Divergence>,
}

impl ProposalSource for LogSource<'_> {
    fn propose(&mut self, worker: &str, _view: &View, event: &Event) -> Option<Result<Proposal, WorkerError>> {
        let txn = *self.worker_txns.get(self.next)?;
        let field = if txn.worker != worker {
            Some(("worker", txn.worker.clone(), worker.to_owned()))
        } else if txn.event != *event {
            Some(("event", txn.event.to_string(), event.to_string()))
        } else {
            None
        };
        if let Some((field, recorded, replayed)) = field {
            self.mismatch = Some(Divergence { seq: txn.seq, field: field.into(), recorded, replayed });
            return None;
        }
        self.next += 1;
        let failure = match (&txn.patch, &txn.outcome) {
            (Value::Null, Outcome::Rejected { reason, .. }) => reason.strip_prefix(WORKER_FAILURE),
            _ => None,
        };
        Some(match failure {
            Some(message) => Err(WorkerError::Replayed(message.to_owned())),
            None => Ok(Proposal::from_logged(&txn.patch)),
        })
    }
}

fn outcome_text(outcome: &Outcome) -> String {
    match outcome {
        Outcome::Accepted { state_hash } => format!("accepted {state_hash}"),
        Outcome::Rejected { stage, reason } => format!("rejected at {stage} ({reason})"),
    }
}

fn compare(recorded: &Transaction, replayed: &Transaction, out: &mut Vec<Divergence>) {
    let mut check = |field: &str, a: String, b: String| {
        if a != b {
            out.push(Divergence { seq: recorded.seq, field: field.into(), recorded: a, replayed: b });
        }
    };
    check("seq", recorded.seq.to_string(), replayed.seq.to_string());
    check("worker", recorded.worker.clone(), replayed.worker.clone());
    check("event", recorded.event.to_string(), replayed.event.to_string());
    check("view_hash", recorded.view_hash.to_hex(), replayed.view_hash.to_hex());
    check("patch", canonical_string(&recorded.patch), canonical_string(&replayed.patch));
    check("outcome", outcome_text(&recorded.outcome), outcome_text(&replayed.outcome));
}

/// Replays `recorded` from `initial` under `blueprint`.
pub fn replay(blueprint: &Blueprint, initial: Value, recorded: &[Transaction]) -> ReplayReport {
    let mut source = LogSource {
        worker_txns: recorded.iter().filter(|t| t.worker != KERNEL).collect(),
        next: 0,
        mismatch: None,
    };
    let result = execute(blueprint, initial, &mut source);
    let compared = result.log.len().min(recorded.len());
    let mut divergences = Vec::new();
    for (a, b) in recorded.iter().zip(&result.log) {
        compare(a, b, &mut divergences);
    }
    if let Some(m) = source.mismatch.take() {
        divergences.push(m);
    } else if recorded.len() > result.log.len() {
        let missing = &recorded[result.log.len()];
        divergences.push(Divergence {
            seq: missing.seq,
            field: "presence".into(),
            recorded: format!("{} more transactions", recorded.len() - result.log.len()),
            replayed: "end of run".into(),
        });
    }
    let truncated = source.mismatch.is_none() && (result.stopped || result.log.len() > recorded.len());
    ReplayReport { compared, recorded: recorded.len(), divergences, truncated, result }
}

/// Validates `blueprint_doc`, rebuilds the initial state and replays.
pub fn replay_document(blueprint_doc: &Value, request: Option<&Value>, recorded: &[Transaction]) -> Result<ReplayReport, RunError> {
    let blueprint = validate_blueprint(blueprint_doc).map_err(RunError::BlueprintRejected)?;
    let initial = blueprint.initial_state_for(request)?;
    Ok(replay(&blueprint, initial, recorded))
}

/// Reconstructs every committed state from the log alone, checking each
/// recorded hash. Returns `(seq, state)` pairs, starting with `(0, initial)`.
pub fn committed_states(initial: &Value, log: &[Transaction]) -> Result<Vec<(u64, Value)>, String> {
    let mut states = vec![(0, initial.clone())];
    let mut current = initial.clone();
    for txn in log {
        let Outcome::Accepted { state_hash } = &txn.outcome else { continue };
        let doc = match &txn.patch {
            Value::String(text) => Value::parse(text).map_err(|e| format!("txn #{}: {e}", txn.seq))?,
            other => other.clone(),
        };
        let patch = Patch::from_value(&doc).map_err(|e| format!("txn #{}: {e}", txn.seq))?;
        current = apply_patch(&current, &patch).map_err(|e| format!("txn #{}: {e}", txn.seq))?;
        if hash_state(&current) != *state_hash {
            return Err(format!("txn #{}: state hash mismatch", txn.seq));
        }
        states.push((txn.seq, current.clone()));
    }
    Ok(states)
}
